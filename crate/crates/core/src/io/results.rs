//! Evaluation records and their CSV forms.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::EvalStats;

/// One evaluated model on one image set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub gamma: Option<f64>,
    pub n_b: usize,
    pub block_dim: usize,
    pub images: Vec<String>,
    pub psnr: Vec<f64>,
    /// Stage-two counts per block, one vector per image; empty for fixed-ratio runs.
    pub popcounts: Vec<Vec<usize>>,
    pub n_avg: f64,
    pub r_avg: f64,
    /// Oracle sparsity level per block, aligned with `popcounts`.
    pub sparsity: Option<Vec<Vec<usize>>>,
}

impl ExperimentResult {
    pub fn from_eval(
        method: &str,
        gamma: Option<f64>,
        n_b: usize,
        block_dim: usize,
        images: Vec<String>,
        stats: &EvalStats,
    ) -> Result<Self> {
        let r = ExperimentResult {
            method: method.to_string(),
            gamma,
            n_b,
            block_dim,
            images,
            psnr: stats.psnr.clone(),
            popcounts: stats.popcounts.clone(),
            n_avg: stats.n_avg,
            r_avg: stats.r_avg,
            sparsity: None,
        };
        r.check()?;
        Ok(r)
    }

    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }

    /// Population standard deviation of the per-image PSNR.
    pub fn std_psnr(&self) -> f64 {
        let m = self.mean_psnr();
        (self.psnr.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / self.psnr.len() as f64).sqrt()
    }

    /// Mean measurements per block on image `i`.
    pub fn image_n_avg(&self, i: usize) -> f64 {
        match self.popcounts.get(i) {
            Some(pc) if !pc.is_empty() => {
                self.n_b as f64 + pc.iter().sum::<usize>() as f64 / pc.len() as f64
            }
            _ => self.n_avg,
        }
    }

    /// Checks shapes and that the stored averages agree with the counts.
    pub fn check(&self) -> Result<()> {
        let n = self.psnr.len();
        if n == 0 || self.block_dim == 0 {
            return Err(Error::invalid("result holds no images"));
        }
        if self.images.len() != n {
            return Err(Error::invalid(format!(
                "{} names for {n} images",
                self.images.len()
            )));
        }
        if !self.popcounts.is_empty() {
            if self.popcounts.len() != n {
                return Err(Error::invalid("popcounts do not cover every image"));
            }
            let blocks: usize = self.popcounts.iter().map(Vec::len).sum();
            let ones: usize = self.popcounts.iter().flatten().sum();
            let n_avg = self.n_b as f64 + ones as f64 / blocks.max(1) as f64;
            if (n_avg - self.n_avg).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "stored n_avg {} but counts give {n_avg}",
                    self.n_avg
                )));
            }
        }
        if (self.n_avg / self.block_dim as f64 - self.r_avg).abs() > 1e-12 {
            return Err(Error::invalid("r_avg does not match n_avg"));
        }
        if let Some(s) = &self.sparsity {
            let same = s.len() == self.popcounts.len()
                && s.iter()
                    .zip(&self.popcounts)
                    .all(|(a, b)| a.len() == b.len());
            if !same {
                return Err(Error::invalid(
                    "sparsity levels do not align with popcounts",
                ));
            }
        }
        Ok(())
    }

    /// `image,psnr,n_avg,r_avg`, one row per image; infinite PSNR prints as `inf`.
    pub fn image_csv(&self) -> String {
        let mut out = String::from("image,psnr,n_avg,r_avg\n");
        for (i, (name, p)) in self.images.iter().zip(&self.psnr).enumerate() {
            let n = self.image_n_avg(i);
            writeln!(out, "{name},{p},{n},{}", n / self.block_dim as f64).expect("write to String");
        }
        out
    }

    /// `image,block,popcount[,sparsity]`; `None` for fixed-ratio runs.
    pub fn block_csv(&self) -> Option<String> {
        if self.popcounts.is_empty() {
            return None;
        }
        let mut out = String::from("image,block,popcount");
        if self.sparsity.is_some() {
            out.push_str(",sparsity");
        }
        out.push('\n');
        for (i, pc) in self.popcounts.iter().enumerate() {
            for (k, c) in pc.iter().enumerate() {
                write!(out, "{},{k},{c}", self.images[i]).expect("write to String");
                if let Some(s) = &self.sparsity {
                    write!(out, ",{}", s[i][k]).expect("write to String");
                }
                out.push('\n');
            }
        }
        Some(out)
    }
}

/// Rate-distortion curve, one row per result, sorted by method then `r_avg`.
pub fn emit_curve(results: &[ExperimentResult]) -> String {
    let mut rows: Vec<&ExperimentResult> = results.iter().collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.r_avg.total_cmp(&b.r_avg)));
    let mut out = String::from("method,r_avg,mean_psnr,std_psnr,n_b,gamma\n");
    for r in rows {
        let gamma = r
            .gamma
            .map_or_else(|| "none".to_string(), |g| g.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{gamma}",
            r.method,
            r.r_avg,
            r.mean_psnr(),
            r.std_psnr(),
            r.n_b
        )
        .expect("write to String");
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
