//! Binary file formats: a one-line JSON header followed by little-endian
//! `f64` payload.

use std::io::{BufRead, Read, Write};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::Trajectory;
use crate::tt::{Core, TensorTrain};

const DTYPE: &str = "f64le";

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct TrainHeader {
    order: usize,
    mode_sizes: Vec<usize>,
    ranks: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct TrajectoryHeader {
    d: usize,
    m: usize,
    dt_between_saves: f64,
    seed: u64,
    model_name: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    dtype: String,
}

fn write_header(out: &mut impl Write, header: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn read_header<T: for<'de> Deserialize<'de>>(input: &mut impl BufRead) -> Result<T> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header terminator".into()));
    }
    serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| Error::Format(format!("bad header: {e}")))
}

fn write_f64s(out: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f64s(input: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let bytes = count
        .checked_mul(8)
        .ok_or_else(|| Error::Format(format!("payload of {count} values overflows")))?;
    let mut buf = vec![0u8; bytes];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn expect_end(input: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match input.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

fn check_dtype(dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {dtype:?}")));
    }
    Ok(())
}

pub fn write_train(out: &mut impl Write, train: &TensorTrain) -> Result<()> {
    let header = TrainHeader {
        order: train.order(),
        mode_sizes: train.mode_sizes(),
        ranks: train.ranks(),
        dtype: DTYPE.into(),
    };
    write_header(out, &header)?;
    for core in train.cores() {
        write_f64s(out, core.data())?;
    }
    Ok(())
}

pub fn read_train(input: &mut impl BufRead) -> Result<TensorTrain> {
    let header: TrainHeader = read_header(input)?;
    check_dtype(&header.dtype)?;
    if header.mode_sizes.len() != header.order || header.ranks.len() != header.order + 1 {
        return Err(Error::Format(format!(
            "order {} with {} mode sizes and {} ranks",
            header.order,
            header.mode_sizes.len(),
            header.ranks.len()
        )));
    }
    let mut cores = Vec::with_capacity(header.order);
    for (k, &n) in header.mode_sizes.iter().enumerate() {
        let (left, right) = (header.ranks[k], header.ranks[k + 1]);
        let len = left
            .checked_mul(n)
            .and_then(|x| x.checked_mul(right))
            .ok_or_else(|| Error::Format(format!("core {k} size overflows")))?;
        cores.push(Core::new(left, n, right, read_f64s(input, len)?)?);
    }
    expect_end(input)?;
    TensorTrain::new(cores).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_trajectory(out: &mut impl Write, traj: &Trajectory) -> Result<()> {
    let header = TrajectoryHeader {
        d: traj.dim(),
        m: traj.len(),
        dt_between_saves: traj.dt_between_saves,
        seed: traj.seed,
        model_name: traj.model_name.clone(),
    };
    write_header(out, &header)?;
    write_f64s(out, traj.states())
}

pub fn read_trajectory(input: &mut impl BufRead) -> Result<Trajectory> {
    let header: TrajectoryHeader = read_header(input)?;
    let count = header
        .d
        .checked_mul(header.m)
        .ok_or_else(|| Error::Format("trajectory size overflows".into()))?;
    let states = read_f64s(input, count)?;
    expect_end(input)?;
    Trajectory::new(header.d, states, header.dt_between_saves, header.seed, &header.model_name)
        .map_err(|e| Error::Format(e.to_string()))
}

/// Row-major dense matrix dump.
pub fn write_matrix(out: &mut impl Write, m: &Mat<f64>) -> Result<()> {
    let header = MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: DTYPE.into(),
    };
    write_header(out, &header)?;
    let values: Vec<f64> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect();
    write_f64s(out, &values)
}

pub fn read_matrix(input: &mut impl BufRead) -> Result<Mat<f64>> {
    let header: MatrixHeader = read_header(input)?;
    check_dtype(&header.dtype)?;
    let count = header
        .rows
        .checked_mul(header.cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let values = read_f64s(input, count)?;
    expect_end(input)?;
    Ok(Mat::from_fn(header.rows, header.cols, |i, j| values[i * header.cols + j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_header_layout() {
        let train = TensorTrain::new(vec![Core::new(1, 2, 1, vec![1.5, -2.0]).unwrap()]).unwrap();
        let mut buf = Vec::new();
        write_train(&mut buf, &train).unwrap();
        let newline = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..newline]).unwrap();
        assert_eq!(header["dtype"], "f64le");
        assert_eq!(header["ranks"], serde_json::json!([1, 1]));
        assert_eq!(&buf[newline + 1..newline + 9], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), newline + 1 + 16);
    }

    #[test]
    fn truncated_payload_rejected() {
        let traj = Trajectory::new(2, vec![1.0, 2.0, 3.0, 4.0], 0.1, 7, "ou").unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        buf.pop();
        assert!(matches!(read_trajectory(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn matrix_round_trip() {
        let m = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 - 0.25);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = read_matrix(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
