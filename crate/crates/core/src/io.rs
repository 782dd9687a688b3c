//! Trajectory CSV files: header `t,x1,...,xn[,clean_x1,...,clean_xn]`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::dynsys::Trajectory;
use crate::error::{Error, Result};

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, include_clean: bool) -> Result<()> {
    let dim = traj.dim();
    let clean = if include_clean {
        traj.clean_ref.as_ref()
    } else {
        None
    };
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|j| format!("x{j}")));
    if clean.is_some() {
        header.extend((1..=dim).map(|j| format!("clean_x{j}")));
    }
    wr.write_record(&header).map_err(csv_err)?;
    for t in 0..traj.n_timepoints() {
        let mut rec = vec![format!("{}", traj.time(t))];
        rec.extend((0..dim).map(|j| format!("{}", traj.values[(t, j)])));
        if let Some(c) = clean {
            rec.extend((0..dim).map(|j| format!("{}", c[(t, j)])));
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse("first column must be `t`".into()));
    }
    let n_clean = header.iter().filter(|h| h.starts_with("clean_")).count();
    let dim = header.len() - 1 - n_clean;
    if dim == 0 || (n_clean != 0 && n_clean != dim) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        if vals.len() != header.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                vals.len(),
                header.len()
            )));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if times.len() < 2 {
        return Err(Error::Parse(
            "trajectory file has fewer than two rows".into(),
        ));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, &t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-6 * dt.abs().max(1e-12) {
            return Err(Error::Parse(format!(
                "time column is not uniformly spaced at row {}",
                i + 2
            )));
        }
    }
    let n = rows.len();
    let values = DMatrix::from_fn(n, dim, |t, j| rows[t][j]);
    let traj = Trajectory::new(times[0], dt, values)?;
    if n_clean > 0 {
        traj.with_clean_ref(DMatrix::from_fn(n, dim, |t, j| rows[t][dim + j]))
    } else {
        Ok(traj)
    }
}

pub fn save_trajectory(path: &Path, traj: &Trajectory, include_clean: bool) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trajectory(std::io::BufWriter::new(f), traj, include_clean)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectory(std::io::BufReader::new(f))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
