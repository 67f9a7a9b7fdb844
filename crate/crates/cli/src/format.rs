//! P2RT v1 dataset files and their `.truth` ground-truth siblings.
//!
//! ```text
//! P2RT 1
//! <n> <K>
//! <m_1> ... <m_K>
//! <n rows of m_1 values for slice 1>
//! ...
//! <n rows of m_K values for slice K>
//! ```
//!
//! Values are separated by single spaces and written in the shortest decimal
//! form that parses back to the same `f64`. The ground-truth file holds
//! labeled matrix sections `A`, `C`, `B1`..`BK` (header line
//! `<label> <rows> <cols>` followed by the rows), then `sigma <value>` and
//! `seed <value>` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use nnparafac2::{RaggedTensor, SynthGroundTruth};

use crate::error::{CliError, Result};

pub const MAGIC: &str = "P2RT 1";

/// Shortest round-trip decimal representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn push_rows(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn encode_tensor(tensor: &RaggedTensor) -> String {
    let mut out = String::new();
    let widths: Vec<String> = tensor.slice_widths().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "{} {}", tensor.n(), tensor.num_slices());
    let _ = writeln!(out, "{}", widths.join(" "));
    for s in tensor.slices() {
        push_rows(&mut out, s);
    }
    out
}

pub fn encode_truth(truth: &SynthGroundTruth) -> String {
    let mut out = String::new();
    let mut section = |label: &str, m: &DMatrix<f64>| {
        let _ = writeln!(out, "{label} {} {}", m.nrows(), m.ncols());
        push_rows(&mut out, m);
    };
    section("A", &truth.a);
    section("C", &truth.c);
    for (k, bk) in truth.b.iter().enumerate() {
        section(&format!("B{}", k + 1), bk);
    }
    let _ = writeln!(out, "sigma {}", format_f64(truth.sigma));
    let _ = writeln!(out, "seed {}", truth.seed);
    out
}

/// Line-oriented reader that reports 1-based line numbers.
struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self { path, iter: text.lines().enumerate(), line: 0 }
    }

    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::Parse { path: self.path.to_path_buf(), line: self.line, message: message.into() }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err(format!("unexpected end of file, expected {what}")))
            }
        }
    }

    fn usizes(&mut self, what: &str, count: Option<usize>) -> Result<Vec<usize>> {
        let line = self.next(what)?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| self.err(format!("invalid integer '{t}' in {what}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(c) = count {
            if vals.len() != c {
                return Err(self.err(format!("expected {c} values for {what}, found {}", vals.len())));
            }
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let line = self.next(what)?;
            let mut count = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= cols {
                    return Err(self.err(format!("too many values in {what}, expected {cols}")));
                }
                let v: f64 = tok.parse().map_err(|_| self.err(format!("invalid number '{tok}' in {what}")))?;
                if !v.is_finite() {
                    return Err(self.err(format!("non-finite value '{tok}' in {what}")));
                }
                m[(i, j)] = v;
                count += 1;
            }
            if count != cols {
                return Err(self.err(format!("expected {cols} values in {what}, found {count}")));
            }
        }
        Ok(m)
    }

    fn expect_end(&mut self) -> Result<()> {
        for (i, l) in self.iter.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Err(self.err("trailing content after last slice"));
            }
        }
        Ok(())
    }
}

pub fn decode_tensor(path: &Path, text: &str) -> Result<RaggedTensor> {
    let mut lines = Lines::new(path, text);
    if lines.next("header")?.trim_end() != MAGIC {
        return Err(lines.err(format!("expected header '{MAGIC}'")));
    }
    let dims = lines.usizes("'<n> <K>'", Some(2))?;
    let (n, k) = (dims[0], dims[1]);
    if n == 0 || k == 0 {
        return Err(lines.err("n and K must be positive"));
    }
    let widths = lines.usizes("slice widths", Some(k))?;
    if widths.contains(&0) {
        return Err(lines.err("slice widths must be positive"));
    }
    let slices = widths
        .iter()
        .enumerate()
        .map(|(s, &w)| lines.matrix(n, w, &format!("slice {}", s + 1)))
        .collect::<Result<Vec<_>>>()?;
    lines.expect_end()?;
    Ok(RaggedTensor::new(n, slices)?)
}

pub fn decode_truth(path: &Path, text: &str) -> Result<SynthGroundTruth> {
    let mut lines = Lines::new(path, text);
    let section = |lines: &mut Lines<'_>, label: &str| -> Result<DMatrix<f64>> {
        let head = lines.next(label)?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != label {
            return Err(lines.err(format!("expected section header '{label} <rows> <cols>'")));
        }
        let dim = |t: &str| t.parse::<usize>().map_err(|_| lines.err(format!("invalid dimension '{t}'")));
        let (rows, cols) = (dim(parts[1])?, dim(parts[2])?);
        lines.matrix(rows, cols, label)
    };
    let a = section(&mut lines, "A")?;
    let c = section(&mut lines, "C")?;
    let b = (1..=c.nrows()).map(|k| section(&mut lines, &format!("B{k}"))).collect::<Result<Vec<_>>>()?;
    let scalar = |lines: &mut Lines<'_>, label: &str| -> Result<String> {
        let line = lines.next(label)?;
        match line.split_once(' ') {
            Some((l, v)) if l == label => Ok(v.trim().to_string()),
            _ => Err(lines.err(format!("expected '{label} <value>'"))),
        }
    };
    let sigma_s = scalar(&mut lines, "sigma")?;
    let sigma = sigma_s.parse().map_err(|_| lines.err(format!("invalid sigma '{sigma_s}'")))?;
    let seed_s = scalar(&mut lines, "seed")?;
    let seed = seed_s.parse().map_err(|_| lines.err(format!("invalid seed '{seed_s}'")))?;
    lines.expect_end()?;
    Ok(SynthGroundTruth { a, c, b, sigma, seed })
}

pub fn truth_path(data_path: &Path) -> PathBuf {
    let mut s = data_path.as_os_str().to_owned();
    s.push(".truth");
    PathBuf::from(s)
}

pub fn read_tensor(path: &Path) -> Result<RaggedTensor> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    decode_tensor(path, &text)
}

pub fn read_truth(path: &Path) -> Result<SynthGroundTruth> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    decode_truth(path, &text)
}

pub fn write_tensor(path: &Path, tensor: &RaggedTensor) -> Result<()> {
    fs::write(path, encode_tensor(tensor)).map_err(CliError::io(path))
}

pub fn write_truth(path: &Path, truth: &SynthGroundTruth) -> Result<()> {
    fs::write(path, encode_truth(truth)).map_err(CliError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nnparafac2::{gen_dataset, SynthSpec};
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<RaggedTensor> {
        decode_tensor(Path::new("t.p2rt"), text)
    }

    #[test]
    fn encodes_exact_layout() {
        let t = RaggedTensor::new(2, vec![
            DMatrix::from_row_slice(2, 1, &[1.0, 0.1]),
            DMatrix::from_row_slice(2, 2, &[-2.5, 1e-300, 3.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(encode_tensor(&t), "P2RT 1\n2 2\n1 2\n1.0\n0.1\n-2.5 1e-300\n3.0 0.0\n");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("P2RT 2\n", 1),
            ("P2RT 1\n2\n", 2),
            ("P2RT 1\n1 2\n1\n", 3),
            ("P2RT 1\n1 1\n2\n1.0 x\n", 4),
            ("P2RT 1\n2 1\n1\n1.0\n", 5),
            ("P2RT 1\n1 1\n1\n1.0 2.0\n", 4),
            ("P2RT 1\n1 1\n1\nNaN\n", 4),
            ("P2RT 1\n1 1\n1\n1.0\n9\n", 5),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(CliError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn truth_round_trip() {
        let (_, truth) = gen_dataset(&SynthSpec { n: 4, m: 5, k: 3, rank: 2, sigma: 1e-3, seed: 77, shift_step: 1 }).unwrap();
        let text = encode_truth(&truth);
        assert!(text.starts_with("A 4 2\n"));
        assert!(text.contains("\nB3 5 2\n"));
        assert!(text.ends_with("sigma 0.001\nseed 77\n"));
        assert_eq!(decode_truth(Path::new("x.truth"), &text).unwrap(), truth);
    }

    #[test]
    fn truth_path_appends_suffix() {
        assert_eq!(truth_path(Path::new("dir/data.p2rt")), PathBuf::from("dir/data.p2rt.truth"));
    }

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(
            n in 1usize..5,
            widths in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let slices = widths.iter().map(|&w| DMatrix::from_fn(n, w, |_, _| {
                let mant: f64 = rng.random_range(-1.0..1.0);
                mant * 10f64.powi(rng.random_range(-300..300))
            })).collect();
            let t = RaggedTensor::new(n, slices).unwrap();
            let back = parse(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
