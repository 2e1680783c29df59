//! Benchmark record types and their CSV encoding.
//!
//! CSV conventions: a header row naming every field, comma separators,
//! decimals rendered with 10 significant digits, booleans as 0/1. Rows are
//! emitted sorted by trial id so identical configurations produce identical
//! bytes (apart from the wall-time column).

use std::fmt;

use eigengrad::io::fmt_g;

/// Gradient computation method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Analytical eigendecomposition gradients (the unstable reference).
    Svd,
    /// Deflation power iteration from random starts, gradients through the
    /// actual iterates.
    Pi,
    /// Exact forward eigenvectors, truncated power-iteration gradients.
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Svd, Method::Pi, Method::Hybrid];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "svd" => Some(Method::Svd),
            "pi" => Some(Method::Pi),
            "hybrid" => Some(Method::Hybrid),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Svd => "svd",
            Method::Pi => "pi",
            Method::Hybrid => "hybrid",
        })
    }
}

/// Normalization layer used in the training harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerChoice {
    None,
    BnLike,
    Zca,
    Pca,
}

impl LayerChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(LayerChoice::None),
            "bn-like" => Some(LayerChoice::BnLike),
            "zca" => Some(LayerChoice::Zca),
            "pca" => Some(LayerChoice::Pca),
            _ => None,
        }
    }
}

impl fmt::Display for LayerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerChoice::None => "none",
            LayerChoice::BnLike => "bn-like",
            LayerChoice::Zca => "zca",
            LayerChoice::Pca => "pca",
        })
    }
}

/// One spectrum-benchmark measurement.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub method: Method,
    pub spectrum: String,
    pub dim: usize,
    pub k: usize,
    pub grad_norm: f64,
    pub fd_relative_error: f64,
    pub exploded: bool,
    pub wall_time_ms: f64,
}

impl TrialRecord {
    pub const HEADER: &'static str =
        "trial_id,method,spectrum,dim,k,grad_norm,fd_relative_error,exploded,wall_time_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.trial_id,
            self.method,
            self.spectrum,
            self.dim,
            self.k,
            fmt_g(self.grad_norm, 10),
            fmt_g(self.fd_relative_error, 10),
            self.exploded as u8,
            fmt_g(self.wall_time_ms, 10),
        )
    }
}

/// One training-harness trial.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub trial_id: usize,
    pub layer: LayerChoice,
    pub method: Method,
    pub group_size: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub diverged: bool,
    pub accuracy: f64,
}

impl TrainRecord {
    pub const HEADER: &'static str =
        "trial_id,layer,method,d,epochs,final_loss,diverged,accuracy";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.trial_id,
            self.layer,
            self.method,
            self.group_size,
            self.epochs,
            fmt_g(self.final_loss, 10),
            self.diverged as u8,
            fmt_g(self.accuracy, 10),
        )
    }
}

/// Writes a CSV document to stdout and, when a path is given, to that file.
pub fn emit_csv(header: &str, rows: &[String], out: Option<&std::path::Path>) -> anyhow::Result<()> {
    let mut doc = String::with_capacity(rows.len() * 48 + header.len() + 1);
    doc.push_str(header);
    doc.push('\n');
    for row in rows {
        doc.push_str(row);
        doc.push('\n');
    }
    print!("{doc}");
    if let Some(path) = out {
        std::fs::write(path, doc)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_render_inf_sentinel_and_booleans() {
        let r = TrialRecord {
            trial_id: 3,
            method: Method::Svd,
            spectrum: "gap=0".into(),
            dim: 8,
            k: 19,
            grad_norm: f64::INFINITY,
            fd_relative_error: f64::INFINITY,
            exploded: true,
            wall_time_ms: 1.25,
        };
        assert_eq!(r.to_csv(), "3,svd,gap=0,8,19,inf,inf,1,1.25");

        let t = TrainRecord {
            trial_id: 0,
            layer: LayerChoice::BnLike,
            method: Method::Hybrid,
            group_size: 16,
            epochs: 3,
            final_loss: 0.125,
            diverged: false,
            accuracy: 0.9375,
        };
        assert_eq!(t.to_csv(), "0,bn-like,hybrid,16,3,0.125,0,0.9375");
    }
}
