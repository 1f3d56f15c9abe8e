//! CSV exchange formats. Each file opens with a `# agediff <schema> v1` line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use agediff::model::AgeProfile;
use agediff::semigroup::Trajectory;

pub const PROFILE_SCHEMA: &str = "# agediff age-profile v1";
pub const TRAJECTORY_SCHEMA: &str = "# agediff trajectory v1";
pub const BIRTHS_SCHEMA: &str = "# agediff birth-history v1";
pub const CHAR_VALUES_SCHEMA: &str = "# agediff char-values v1";

fn open_writer(path: &Path, schema: &str) -> Result<csv::Writer<File>, String> {
    let mut f = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    writeln!(f, "{schema}").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), String> {
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

fn record<const N: usize>(w: &mut csv::Writer<File>, fields: [String; N]) -> Result<(), String> {
    w.write_record(&fields).map_err(|e| e.to_string())
}

pub fn write_profile(path: &Path, psi: &AgeProfile) -> Result<(), String> {
    let mut w = open_writer(path, PROFILE_SCHEMA)?;
    record(&mut w, ["age_index".into(), "x_index".into(), "value".into()])?;
    for (i, row) in psi.values.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            record(&mut w, [i.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    finish(w, path)
}

/// Reads a profile on `n_nodes x n_space` nodes; every entry must appear once.
pub fn read_profile(path: &Path, n_nodes: usize, n_space: usize) -> Result<AgeProfile, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        Some(Ok(first)) if first.trim() == PROFILE_SCHEMA => {}
        Some(Ok(first)) => {
            return Err(format!(
                "{}: expected schema line '{PROFILE_SCHEMA}', found '{first}'",
                path.display()
            ))
        }
        Some(Err(e)) => return Err(format!("{}: {e}", path.display())),
        None => return Err(format!("{}: empty file", path.display())),
    }
    let rest: Vec<String> = lines.collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let body = rest.join("\n");
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["age_index", "x_index", "value"] {
        return Err(format!("{}: header must be age_index,x_index,value", path.display()));
    }
    let mut psi = AgeProfile::zeros(n_nodes, n_space);
    let mut seen = vec![false; n_nodes * n_space];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let at = |what: &str| format!("{}: data row {}: {what}", path.display(), line + 1);
        if rec.len() != 3 {
            return Err(at("expected 3 fields"));
        }
        let i: usize = rec[0].parse().map_err(|_| at("bad age_index"))?;
        let k: usize = rec[1].parse().map_err(|_| at("bad x_index"))?;
        let v: f64 = rec[2].parse().map_err(|_| at("bad value"))?;
        if i >= n_nodes || k >= n_space {
            return Err(at(&format!("index ({i}, {k}) outside {n_nodes} x {n_space}")));
        }
        if !v.is_finite() {
            return Err(at("value is not finite"));
        }
        let slot = i * n_space + k;
        if seen[slot] {
            return Err(at(&format!("duplicate entry ({i}, {k})")));
        }
        seen[slot] = true;
        psi.values[i][k] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(format!(
            "{}: missing entry ({}, {})",
            path.display(),
            missing / n_space,
            missing % n_space
        ));
    }
    Ok(psi)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, ages: &[f64]) -> Result<(), String> {
    let mut w = open_writer(path, TRAJECTORY_SCHEMA)?;
    record(&mut w, ["t".into(), "a".into(), "x_index".into(), "value".into()])?;
    for (t, u) in traj.times.iter().zip(&traj.profiles) {
        for (a, row) in ages.iter().zip(&u.values) {
            for (k, v) in row.iter().enumerate() {
                record(&mut w, [t.to_string(), a.to_string(), k.to_string(), v.to_string()])?;
            }
        }
    }
    finish(w, path)
}

pub fn write_births(path: &Path, traj: &Trajectory) -> Result<(), String> {
    let mut w = open_writer(path, BIRTHS_SCHEMA)?;
    record(&mut w, ["t".into(), "x_index".into(), "value".into()])?;
    for (t, b) in traj.times.iter().zip(&traj.birth_history) {
        for (k, v) in b.iter().enumerate() {
            record(&mut w, [t.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    finish(w, path)
}

pub fn write_char_values(path: &Path, values: &[(f64, f64)]) -> Result<(), String> {
    let mut w = open_writer(path, CHAR_VALUES_SCHEMA)?;
    record(&mut w, ["lambda".into(), "radius".into()])?;
    for (l, r) in values {
        record(&mut w, [l.to_string(), r.to_string()])?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let psi = AgeProfile::from_fn(4, 3, |i, k| (i as f64 + 0.1) * (k as f64 - 1.3));
        write_profile(&p, &psi).unwrap();
        assert_eq!(read_profile(&p, 4, 3).unwrap(), psi);
    }

    #[test]
    fn incomplete_profile_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, format!("{PROFILE_SCHEMA}\nage_index,x_index,value\n0,0,1.0\n")).unwrap();
        let e = read_profile(&p, 2, 1).unwrap_err();
        assert!(e.contains("missing entry (1, 0)"), "{e}");
    }

    #[test]
    fn schema_line_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "age_index,x_index,value\n0,0,1.0\n").unwrap();
        assert!(read_profile(&p, 1, 1).unwrap_err().contains("schema"));
    }
}
