//! Central finite-difference checks of analytic gradients.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{Arch, ForecastBatch, Forecaster, ModelConfig};
use crate::tensor::Tensor;

/// Denominator floor for relative error, so that gradients that are both
/// essentially zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Largest relative error over paired analytic and numeric gradients, with its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0.0, 0), |best, (i, e)| if e > best.0 { (e, i) } else { best })
}

/// Finite-difference step used by the model suites.
pub const STEP: f64 = 1e-4;
/// Largest accepted relative error for model parameter gradients.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Deliberate corruption of analytic gradients, for negative-control runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Multiplies the analytic gradient of parameter `param` by `factor`.
    ScaleGradient { param: usize, factor: f64 },
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct ArchReport {
    pub arch: Arch,
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl ArchReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

/// Random toy batch for `config` with `width` input features.
pub fn toy_batch(config: &ModelConfig, width: usize, batch: usize, seed: u64) -> Result<ForecastBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    Ok(ForecastBatch {
        x_past: Tensor::new(&[batch, config.lookback, width], draw(batch * config.lookback * width))?,
        y_future: Tensor::new(&[batch, config.horizon], draw(batch * config.horizon))?,
        series_id: (0..batch).map(|i| format!("toy/{i}")).collect(),
    })
}

/// Checks every parameter gradient of a toy-sized `arch` model against central
/// differences of the eval-mode loss.
pub fn check_architecture(arch: Arch, seed: u64, fault: Option<Fault>) -> Result<ArchReport> {
    let start = Instant::now();
    let config = ModelConfig::toy(arch);
    let width = 5;
    let mut model = Forecaster::new(&config, width, seed)?;
    let batch = toy_batch(&config, width, 2, seed.wrapping_add(1))?;
    let (_, mut grads) = model.loss_and_grads(&batch, &mut model.eval_ctx())?;
    if let Some(Fault::ScaleGradient { param, factor }) = fault {
        if let Some(g) = grads.get_mut(param) {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
    let mut params = Vec::with_capacity(grads.len());
    for (i, analytic) in grads.iter().enumerate() {
        let original = model.params().tensors()[i].data().to_vec();
        let numeric = central_difference(&original, STEP, |probe| {
            model.params_mut().tensors_mut()[i].data_mut().copy_from_slice(probe);
            model.loss(&batch, &mut model.eval_ctx())
        })?;
        model.params_mut().tensors_mut()[i].data_mut().copy_from_slice(&original);
        let (err, idx) = max_relative_error(analytic, &numeric);
        params.push(ParamCheck {
            name: model.params().names()[i].clone(),
            numel: original.len(),
            max_rel_err: err,
            worst_index: idx,
        });
    }
    Ok(ArchReport {
        arch,
        params,
        tolerance: MODEL_TOLERANCE,
        elapsed: start.elapsed(),
    })
}
