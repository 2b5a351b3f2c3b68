//! Versioned JSON input files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use nearby::gep::{Block, BlockFamily, WindowPlan};
use nearby::linalg::C64;
use nearby::ogata::irrep_family;
use nearby::shifts::WeightedShift;
use nearby::su2::Spin;

pub const WEIGHTS_SCHEMA: &str = "nearby.weights/1";
pub const FAMILY_SCHEMA: &str = "nearby.family/1";
pub const WINDOWS_SCHEMA: &str = "nearby.windows/1";

#[derive(Deserialize)]
#[serde(untagged)]
enum Weight {
    Real(f64),
    Complex([f64; 2]),
}

impl Weight {
    fn value(&self) -> C64 {
        match *self {
            Weight::Real(x) => C64::new(x, 0.0),
            Weight::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    schema: String,
    weights: Vec<Weight>,
    #[serde(default)]
    closing: Option<Weight>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FamilyFile {
    Blocks { schema: String, alpha: Vec<f64>, blocks: Vec<Block> },
    Irreps { schema: String, two_lambda: Vec<u32>, n: u64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Lengths {
    One(usize),
    Each(Vec<usize>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowsFile {
    schema: String,
    cuts: Vec<f64>,
    n: Lengths,
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {} file {}", what, path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {} file {}", what, path.display()))
}

fn check_schema(found: &str, want: &str) -> Result<()> {
    if found != want {
        bail!("schema '{}' is not supported here (expected '{}')", found, want);
    }
    Ok(())
}

/// Unilateral when `closing` is absent.
pub fn weights(path: &Path) -> Result<WeightedShift> {
    let f: WeightsFile = read(path, "weights")?;
    check_schema(&f.schema, WEIGHTS_SCHEMA)?;
    if f.weights.is_empty() && f.closing.is_none() {
        bail!("the weights list is empty");
    }
    Ok(WeightedShift { weights: f.weights.iter().map(Weight::value).collect(), closing: f.closing.as_ref().map(Weight::value) })
}

/// Either explicit blocks on a grid, or spins 2λ at N sites (blocks S^λ(σ+)/N on the grid m/N).
pub fn family(path: &Path) -> Result<BlockFamily> {
    let f: FamilyFile = read(path, "family")?;
    match f {
        FamilyFile::Blocks { schema, alpha, blocks } => {
            check_schema(&schema, FAMILY_SCHEMA)?;
            Ok(BlockFamily { alpha, blocks })
        }
        FamilyFile::Irreps { schema, mut two_lambda, n } => {
            check_schema(&schema, FAMILY_SCHEMA)?;
            if two_lambda.is_empty() || n == 0 {
                bail!("an irreps family needs at least one spin and n ≥ 1");
            }
            two_lambda.sort_unstable();
            let spins: Vec<Spin> = two_lambda.into_iter().map(Spin::new).collect();
            Ok(irrep_family(&spins, n))
        }
    }
}

pub fn windows(path: &Path) -> Result<WindowPlan> {
    let f: WindowsFile = read(path, "windows")?;
    check_schema(&f.schema, WINDOWS_SCHEMA)?;
    Ok(match f.n {
        Lengths::One(n) => WindowPlan::uniform(f.cuts, n),
        Lengths::Each(n) => WindowPlan { cuts: f.cuts, n },
    })
}
