//! Flat weight file shared with the external trainer.
//!
//! ```text
//! d C n m
//! W_q   d rows of d values
//! W_k   d rows of d values
//! W_v   d rows of d values
//! W_o   d rows of C values
//! lambda
//! H_x   n rows of d values
//! H_r   m rows of d values
//! probs C values
//! ```
//!
//! Values are whitespace-separated decimals printed with Rust's shortest
//! round-trip formatting, so reading a written file is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{ren_forward, HiddenStates, Matrix, RenError, RenParams};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Ren(#[from] RenError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenFixture {
    pub params: RenParams,
    pub hx: HiddenStates,
    pub hr: HiddenStates,
    pub probs: Vec<f64>,
}

impl RenFixture {
    /// Runs the forward pass and bundles everything needed to replay it.
    pub fn new(params: RenParams, hx: HiddenStates, hr: HiddenStates) -> Result<Self, RenError> {
        let probs = ren_forward(&hx, &hr, &params)?;
        Ok(RenFixture { params, hx, hr, probs })
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {} {}", p.d(), p.classes(), self.hx.len(), self.hr.len());
        for m in [&p.w_q, &p.w_k, &p.w_v, &p.w_o] {
            push_matrix(&mut s, m);
        }
        let _ = writeln!(s, "{}", p.lambda);
        push_matrix(&mut s, self.hx.matrix());
        push_matrix(&mut s, self.hr.matrix());
        push_row(&mut s, &self.probs);
        s
    }

    pub fn parse(text: &str) -> Result<Self, ExportError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next_row = |want: usize| -> Result<Vec<f64>, ExportError> {
            let (i, line) = lines.next().ok_or(ExportError::Format { line: 0, msg: "unexpected end of file".into() })?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ExportError::Format { line: i + 1, msg: e.to_string() })?;
            if row.len() != want {
                return Err(ExportError::Format { line: i + 1, msg: format!("expected {want} values, found {}", row.len()) });
            }
            Ok(row)
        };
        let header = next_row(4)?;
        if header.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
            return Err(ExportError::Format { line: 1, msg: "header must be four positive integers".into() });
        }
        let [d, c, n, m] = [header[0] as usize, header[1] as usize, header[2] as usize, header[3] as usize];
        let mut matrix = |rows: usize, cols: usize| -> Result<Matrix, ExportError> {
            let data = (0..rows).map(|_| next_row(cols)).collect::<Result<Vec<_>, _>>()?;
            Ok(Matrix::from_rows(&data).unwrap_or_else(|| Matrix::zeros(rows, cols)))
        };
        let w_q = matrix(d, d)?;
        let w_k = matrix(d, d)?;
        let w_v = matrix(d, d)?;
        let w_o = matrix(d, c)?;
        let lambda = matrix(1, 1)?[(0, 0)];
        let hx = HiddenStates::new(matrix(n, d)?)?;
        let hr = HiddenStates::new(matrix(m, d)?)?;
        let probs = matrix(1, c)?.as_slice().to_vec();
        let params = RenParams { w_q, w_k, w_v, w_o, lambda };
        params.validate()?;
        Ok(RenFixture { params, hx, hr, probs })
    }
}

fn push_row(s: &mut String, row: &[f64]) {
    let parts: Vec<String> = row.iter().map(|x| x.to_string()).collect();
    s.push_str(&parts.join(" "));
    s.push('\n');
}

fn push_matrix(s: &mut String, m: &Matrix) {
    for r in 0..m.rows() {
        push_row(s, m.row(r));
    }
}

pub fn write_fixture(path: &Path, f: &RenFixture) -> Result<(), ExportError> {
    std::fs::write(path, f.to_text())?;
    Ok(())
}

pub fn read_fixture(path: &Path) -> Result<RenFixture, ExportError> {
    RenFixture::parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> RenFixture {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hx = HiddenStates::new(Matrix::uniform(3, 4, 1.0, &mut rng)).unwrap();
        let hr = HiddenStates::new(Matrix::uniform(2, 4, 1.0, &mut rng)).unwrap();
        RenFixture::new(RenParams::init(4, 3, 9), hx, hr).unwrap()
    }

    #[test]
    fn exact_round_trip() {
        let f = fixture();
        let text = f.to_text();
        assert!(text.starts_with("4 3 3 2\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 4 + 1 + 3 + 2 + 1);
        let back = RenFixture::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(ren_forward(&back.hx, &back.hr, &back.params).unwrap(), f.probs);
    }

    #[test]
    fn malformed() {
        let text = fixture().to_text();
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(RenFixture::parse(&truncated), Err(ExportError::Format { .. })));
        let bad = text.replacen("4 3 3 2", "4 3 x 2", 1);
        assert!(matches!(RenFixture::parse(&bad), Err(ExportError::Format { line: 1, .. })));
        let short = text.replacen('\n', " 1.0\n", 2);
        assert!(RenFixture::parse(&short).is_err());
    }
}
