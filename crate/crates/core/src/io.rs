//! Text formats for matrices, masks, chains and manifests, and staged
//! (all-or-nothing) output directories.
//!
//! Matrices are tab-separated with one header row of column labels and one
//! leading column of row labels. Floats are written in the shortest form that
//! parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::HoldoutMask;
use crate::gibbs::{PosteriorChain, SamplerConfig, Snapshot, TracePoint};
use crate::model::{BetaMatrix, Embedding, FactorState, Hyperparams};

/// Round-trip float formatting; exponent form only for very small or large
/// magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(format!("cannot open {}", path.display()), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("cannot create {}", path.display()), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(format!("cannot write {}", path.display()), e))?;
    w.into_inner()
        .map_err(|e| Error::io(format!("cannot write {}", path.display()), e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(format!("cannot sync {}", path.display()), e))
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix<T> {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<T>,
}

/// Reads a labeled matrix. Every cell must parse as `T`.
pub fn read_matrix<T>(path: &Path) -> Result<LabeledMatrix<T>>
where
    T: FromStr + Clone + Default,
    T::Err: Display,
{
    let mut rdr = tsv_reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => return Err(parse_err(path, 1, "empty file; expected a header row")),
    };
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if col_ids.is_empty() {
        return Err(parse_err(path, 1, "header has no column labels"));
    }
    let m = col_ids.len();
    let mut row_ids = Vec::new();
    let mut flat = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != m + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields (label + {m} values), found {}", m + 1, rec.len()),
            ));
        }
        let label = rec[0].to_owned();
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v = field.trim().parse::<T>().map_err(|e| {
                parse_err(
                    path,
                    line,
                    format!(
                        "cell ({label}, {}) column {}: cannot parse {field:?}: {e}",
                        col_ids[j],
                        j + 2
                    ),
                )
            })?;
            flat.push(v);
        }
        row_ids.push(label);
    }
    if row_ids.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let values = Array2::from_shape_vec((row_ids.len(), m), flat).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(LabeledMatrix {
        row_ids,
        col_ids,
        values,
    })
}

/// Writes a labeled matrix; `corner` fills the top-left header cell.
pub fn write_matrix<T, F>(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &Array2<T>,
    fmt: F,
) -> Result<()>
where
    F: Fn(&T) -> String,
{
    if values.dim() != (row_ids.len(), col_ids.len()) {
        return Err(Error::Dimension(format!(
            "{:?} matrix with {} row and {} column labels",
            values.dim(),
            row_ids.len(),
            col_ids.len()
        )));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(format!("cannot write {}", path.display()), e);
    write!(w, "{corner}").map_err(io)?;
    for c in col_ids {
        write!(w, "\t{c}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (label, row) in row_ids.iter().zip(values.rows()) {
        write!(w, "{label}").map_err(io)?;
        for x in row {
            write!(w, "\t{}", fmt(x)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    finish(w, path)
}

/// Reads values in `[0, 1]` and clamps them into the open interval.
pub fn read_beta_matrix(path: &Path) -> Result<BetaMatrix> {
    let lm = read_matrix::<f64>(path)?;
    for ((i, j), &v) in lm.values.indexed_iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(parse_err(
                path,
                i as u64 + 2,
                format!("cell ({}, {}) = {v} lies outside [0, 1]", lm.row_ids[i], lm.col_ids[j]),
            ));
        }
    }
    BetaMatrix::new(lm.values, lm.row_ids, lm.col_ids)
}

pub fn write_beta_matrix(path: &Path, beta: &BetaMatrix) -> Result<()> {
    write_matrix(path, "sample", beta.row_ids(), beta.col_ids(), beta.values(), |x| {
        fmt_f64(*x)
    })
}

/// Two columns `row`, `col` of 0-based indices under a header.
pub fn write_mask(path: &Path, mask: &HoldoutMask) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(format!("cannot write {}", path.display()), e);
    writeln!(w, "row\tcol").map_err(io)?;
    for (i, j) in mask.cells() {
        writeln!(w, "{i}\t{j}").map_err(io)?;
    }
    finish(w, path)
}

pub fn read_mask(path: &Path, nrows: usize, ncols: usize) -> Result<HoldoutMask> {
    let mut cells = Vec::new();
    for (n, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let lineno = n as u64 + 1;
        if n == 0 {
            let head: Vec<&str> = line.split('\t').map(str::trim).collect();
            if head != ["row", "col"] {
                return Err(parse_err(
                    path,
                    1,
                    format!("expected header \"row<TAB>col\", found {line:?}"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(path, lineno, format!("bad index {s:?}: {e}")))
        };
        match fields.as_slice() {
            [i, j] => cells.push((parse(i)?, parse(j)?)),
            _ => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected 2 fields, found {}", fields.len()),
                ))
            }
        }
    }
    HoldoutMask::from_cells(nrows, ncols, cells)
}

/// Long format: one line per factor entry per snapshot,
/// `sweep  matrix  row  col  value`, where `matrix` is `theta1`, `theta2`
/// (row = sample, col = component) or `phi` (row = component, col = gene).
pub fn write_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(format!("cannot write {}", path.display()), e);
    writeln!(w, "sweep\tmatrix\trow\tcol\tvalue").map_err(io)?;
    for s in &chain.snapshots {
        for (name, mat) in [
            ("theta1", &s.state.theta1),
            ("theta2", &s.state.theta2),
            ("phi", &s.state.phi),
        ] {
            for ((r, c), x) in mat.indexed_iter() {
                writeln!(w, "{}\t{name}\t{r}\t{c}\t{}", s.sweep, fmt_f64(*x)).map_err(io)?;
            }
        }
    }
    finish(w, path)
}

#[derive(Default)]
struct PartialSnapshot {
    entries: [Vec<(usize, usize, f64)>; 3],
}

/// Reads snapshots written by [`write_chain`]; config and hyperparameters
/// come from the run's manifest.
pub fn read_chain(path: &Path, config: SamplerConfig, hyper: Hyperparams) -> Result<PosteriorChain> {
    let mut sweeps: BTreeMap<usize, PartialSnapshot> = BTreeMap::new();
    let (mut n, mut m, mut k) = (0, 0, 0);
    for (idx, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let lineno = idx as u64 + 1;
        if idx == 0 {
            if line.trim() != "sweep\tmatrix\trow\tcol\tvalue" {
                return Err(parse_err(path, 1, format!("unexpected chain header {line:?}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, found {}", f.len())));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(path, lineno, format!("bad integer {s:?}: {e}")))
        };
        let (sweep, row, col) = (int(f[0])?, int(f[2])?, int(f[3])?);
        let value: f64 = f[4]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad value {:?}: {e}", f[4])))?;
        let slot = match f[1] {
            "theta1" | "theta2" => {
                n = n.max(row + 1);
                k = k.max(col + 1);
                usize::from(f[1] == "theta2")
            }
            "phi" => {
                k = k.max(row + 1);
                m = m.max(col + 1);
                2
            }
            other => return Err(parse_err(path, lineno, format!("unknown matrix {other:?}"))),
        };
        sweeps.entry(sweep).or_default().entries[slot].push((row, col, value));
    }
    let mut snapshots = Vec::with_capacity(sweeps.len());
    for (sweep, part) in sweeps {
        let shapes = [(n, k), (n, k), (k, m)];
        let mut mats = Vec::with_capacity(3);
        for (entries, shape) in part.entries.iter().zip(shapes) {
            let mut a = Array2::from_elem(shape, f64::NAN);
            for &(r, c, x) in entries {
                a[[r, c]] = x;
            }
            if entries.len() != shape.0 * shape.1 || a.iter().any(|x| x.is_nan()) {
                return Err(Error::Dimension(format!(
                    "{}: snapshot at sweep {sweep} is incomplete",
                    path.display()
                )));
            }
            mats.push(a);
        }
        let phi = mats.pop().unwrap();
        let theta2 = mats.pop().unwrap();
        let theta1 = mats.pop().unwrap();
        snapshots.push(Snapshot {
            sweep,
            state: FactorState::new(theta1, theta2, phi)?,
        });
    }
    let chain = PosteriorChain {
        snapshots,
        config,
        hyper,
        trace: Vec::new(),
    };
    chain.validate()?;
    Ok(chain)
}

pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(format!("cannot write {}", path.display()), e);
    writeln!(w, "sweep\tlog_joint").map_err(io)?;
    for t in trace {
        writeln!(w, "{}\t{}", t.sweep, fmt_f64(t.log_joint)).map_err(io)?;
    }
    finish(w, path)
}

pub fn read_trace(path: &Path) -> Result<Vec<TracePoint>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        if idx == 0 {
            continue;
        }
        let lineno = idx as u64 + 1;
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected 2 fields"))?;
        out.push(TracePoint {
            sweep: a.parse().map_err(|e| parse_err(path, lineno, format!("{e}")))?,
            log_joint: b.parse().map_err(|e| parse_err(path, lineno, format!("{e}")))?,
        });
    }
    Ok(out)
}

fn component_labels(k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("k{c}")).collect()
}

/// `rho` with sample labels and component columns `k1 .. kK`.
pub fn write_embedding(path: &Path, emb: &Embedding, row_ids: &[String]) -> Result<()> {
    write_matrix(
        path,
        "sample",
        row_ids,
        &component_labels(emb.rho.ncols()),
        &emb.rho,
        |x| fmt_f64(*x),
    )
}

pub fn read_embedding(path: &Path) -> Result<(Vec<String>, Embedding)> {
    let lm = read_matrix::<f64>(path)?;
    Ok((lm.row_ids, Embedding { rho: lm.values }))
}

/// Writes a factor matrix with generic labels (`s1..`, `k1..`, `g1..`).
pub fn write_factor(path: &Path, rows: &[String], cols: &[String], values: &Array2<f64>) -> Result<()> {
    write_matrix(path, "id", rows, cols, values, |x| fmt_f64(*x))
}

/// Ordered `key=value` lines. Blank lines and `#` comments are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        open(path)?
            .read_to_string(&mut text)
            .map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let mut out = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(path, n as u64 + 1, format!("expected key=value, found {line:?}")))?;
            out.set(k.trim(), v.trim());
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        for (k, v) in &self.entries {
            if v.contains('\n') {
                return Err(Error::Config(format!("manifest value for {k} contains a newline")));
            }
            writeln!(w, "{k}={v}").map_err(|e| Error::io(format!("cannot write {}", path.display()), e))?;
        }
        finish(w, path)
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// A temporary directory next to `dest` whose files are moved into `dest`
/// by [`Staging::commit`]. Dropped without a commit, it removes itself.
#[derive(Debug)]
pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Error::io(format!("cannot create {}", parent.display()), e))?;
        let name = dest
            .file_name()
            .ok_or_else(|| Error::Config(format!("output path {} has no file name", dest.display())))?
            .to_string_lossy();
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.subsec_nanos());
        let tmp = parent.join(format!(".{name}.tmp-{}-{nanos}", std::process::id()));
        fs::create_dir(&tmp).map_err(|e| Error::io(format!("cannot create {}", tmp.display()), e))?;
        Ok(Staging {
            tmp,
            dest: dest.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    /// Moves the staged files into place. A missing destination directory is
    /// created by a single rename; otherwise files are renamed one by one,
    /// replacing files of the same name.
    pub fn commit(mut self) -> Result<()> {
        let ctx = |p: &Path| format!("cannot move staged output into {}", p.display());
        if !self.dest.exists() {
            fs::rename(&self.tmp, &self.dest).map_err(|e| Error::io(ctx(&self.dest), e))?;
        } else {
            if !self.dest.is_dir() {
                return Err(Error::Config(format!(
                    "{} exists and is not a directory",
                    self.dest.display()
                )));
            }
            let entries = fs::read_dir(&self.tmp).map_err(|e| Error::io(ctx(&self.dest), e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(ctx(&self.dest), e))?;
                let target = self.dest.join(entry.file_name());
                fs::rename(entry.path(), &target).map_err(|e| Error::io(ctx(&target), e))?;
            }
            fs::remove_dir(&self.tmp).map_err(|e| Error::io(ctx(&self.dest), e))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1e-300, 0.1, 1.0 / 3.0, 1e-6, 1.0 - 1e-6, 123456.789, 5e20, -2.5e-7] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(1e-300), "1e-300");
    }

    #[test]
    fn manifest_round_trip_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        let mut m = Manifest::new();
        m.set("seed", 7);
        m.set("eps1", 0.75);
        m.set("seed", 8);
        m.write(&p).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("seed"), Some("8"));
        assert_eq!(back.entries()[0].0, "seed");
    }

    #[test]
    fn matrix_parse_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        fs::write(&p, "id\ta\tb\nr1\t0.1\t0.2\nr2\t0.3\tzz\n").unwrap();
        match read_matrix::<f64>(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("(r2, b)"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "id\ta\tb\nr1\t0.1\n").unwrap();
        assert!(matches!(read_matrix::<f64>(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn staging_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("out");
        {
            let st = Staging::new(&dest).unwrap();
            fs::write(st.path("a.txt"), "x").unwrap();
        }
        assert!(!dest.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let st = Staging::new(&dest).unwrap();
        fs::write(st.path("a.txt"), "x").unwrap();
        st.commit().unwrap();
        let st = Staging::new(&dest).unwrap();
        fs::write(st.path("b.txt"), "y").unwrap();
        st.commit().unwrap();
        assert!(dest.join("a.txt").exists() && dest.join("b.txt").exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.tsv");
        let mask = HoldoutMask::from_cells(4, 5, vec![(3, 4), (0, 0), (2, 1)]).unwrap();
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p, 4, 5).unwrap().cells(), mask.cells());
        assert!(read_mask(&p, 3, 5).is_err());
    }

    #[test]
    fn beta_matrix_rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.tsv");
        fs::write(&p, "id\tg1\tg2\ns1\t0.2\t1.5\n").unwrap();
        match read_beta_matrix(&p) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("(s1, g2)")),
            other => panic!("{other:?}"),
        }
        let b = BetaMatrix::new(array![[0.2, 0.8]], vec!["s1".into()], vec!["g1".into(), "g2".into()]).unwrap();
        write_beta_matrix(&p, &b).unwrap();
        assert_eq!(read_beta_matrix(&p).unwrap(), b);
    }
}
