//! SGD with F32 master weights and the loss-scaling loop for half-precision training.
//!
//! ```no_run
//! # use nanonnl::solver::{SgdSolver, DynamicLossScaler, dynamic_step};
//! # fn demo(loss: &nanonnl::Variable) -> nanonnl::Result<()> {
//! let mut solver = SgdSolver::new(0.1);
//! solver.setup(&nanonnl::parameters::get_parameters())?;
//! let mut scaler = DynamicLossScaler::default();
//! loss.forward(false)?;
//! loss.backward(scaler.loss_scale, true)?;
//! let outcome = dynamic_step(&mut scaler, &mut solver)?;
//! # let _ = outcome; Ok(()) }
//! ```

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::Variable;
use crate::tensor::{Dtype, NdArray};

struct Slot {
    param: Variable,
    master: NdArray,
}

/// Plain stochastic gradient descent, `w ← w − lr·g`, computed in F32.
///
/// Half-precision parameters are updated through an F32 master copy and then
/// re-quantized, so steps smaller than the F16 spacing still accumulate.
pub struct SgdSolver {
    lr: f32,
    grad_clip: Option<f32>,
    slots: Option<IndexMap<String, Slot>>,
}

impl SgdSolver {
    pub fn new(lr: f32) -> Self {
        SgdSolver {
            lr,
            grad_clip: None,
            slots: None,
        }
    }

    /// Rescales gradients whose global L2 norm exceeds `max_norm`.
    pub fn with_grad_clip(mut self, max_norm: Option<f32>) -> Self {
        self.grad_clip = max_norm;
        self
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// Takes ownership of `params`, replacing any previous set.
    pub fn setup(&mut self, params: &IndexMap<String, Variable>) -> Result<()> {
        if params.is_empty() {
            return Err(Error::EmptyParameterSet);
        }
        let mut slots = IndexMap::with_capacity(params.len());
        for (name, param) in params {
            if !param.need_grad() {
                return Err(Error::FrozenParameter(name.clone()));
            }
            let data = param.data().ok_or_else(|| Error::UninitializedInput(name.clone()))?;
            slots.insert(
                name.clone(),
                Slot {
                    param: param.clone(),
                    master: data.to_dtype(Dtype::F32),
                },
            );
        }
        self.slots = Some(slots);
        Ok(())
    }

    fn slots(&self) -> Result<&IndexMap<String, Slot>> {
        self.slots.as_ref().ok_or(Error::NotSetup)
    }

    fn slots_mut(&mut self) -> Result<&mut IndexMap<String, Slot>> {
        self.slots.as_mut().ok_or(Error::NotSetup)
    }

    pub fn len(&self) -> usize {
        self.slots.as_ref().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameters(&self) -> Result<IndexMap<String, Variable>> {
        Ok(self
            .slots()?
            .iter()
            .map(|(k, s)| (k.clone(), s.param.clone()))
            .collect())
    }

    /// The F32 master copy of `name`.
    pub fn master(&self, name: &str) -> Result<Option<&NdArray>> {
        Ok(self.slots()?.get(name).map(|s| &s.master))
    }

    pub fn zero_grad(&self) -> Result<()> {
        for slot in self.slots()?.values() {
            slot.param.zero_grad();
        }
        Ok(())
    }

    /// Multiplies every gradient by `factor`. The result is kept in F32 even
    /// for half-precision parameters so unscaled gradients do not underflow again.
    pub fn scale_grad(&self, factor: f32) -> Result<()> {
        for slot in self.slots()?.values() {
            let mut g = slot.param.grad().to_dtype(Dtype::F32);
            g.map_inplace(|v| v * factor);
            slot.param.set_grad(g)?;
        }
        Ok(())
    }

    pub fn check_inf_or_nan_grad(&self) -> Result<bool> {
        Ok(self.slots()?.values().any(|s| s.param.grad().has_inf_or_nan()))
    }

    /// Global L2 norm over all gradients, accumulated in f64.
    pub fn grad_norm(&self) -> Result<f64> {
        let sq: f64 = self
            .slots()?
            .values()
            .flat_map(|s| {
                s.param
                    .grad()
                    .data()
                    .iter()
                    .map(|&g| (g as f64) * (g as f64))
                    .collect::<Vec<_>>()
            })
            .sum();
        Ok(sq.sqrt())
    }

    pub fn update(&mut self) -> Result<()> {
        let clip = match self.grad_clip {
            Some(max) => {
                let norm = self.grad_norm()?;
                if norm > max as f64 {
                    (max as f64 / norm) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let lr = self.lr;
        for slot in self.slots_mut()?.values_mut() {
            let param = &slot.param;
            if param.dtype() == Dtype::F32 {
                if let Some(d) = param.data() {
                    slot.master = d.to_dtype(Dtype::F32);
                }
            }
            let g = param.grad();
            if g.shape() != slot.master.shape() {
                return Err(Error::shape(format!(
                    "gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    slot.master.shape()
                )));
            }
            let master = slot.master.data_mut();
            if clip == 1.0 {
                for (w, &gv) in master.iter_mut().zip(g.data()) {
                    *w -= lr * gv;
                }
            } else {
                for (w, &gv) in master.iter_mut().zip(g.data()) {
                    *w -= lr * (gv * clip);
                }
            }
            param.set_data(slot.master.clone())?;
        }
        Ok(())
    }
}

/// State of the adaptive loss scale: halve on overflow, double after
/// `interval` clean steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicLossScaler {
    pub loss_scale: f32,
    pub scaling_factor: f32,
    pub interval: u64,
    pub counter: u64,
}

impl Default for DynamicLossScaler {
    fn default() -> Self {
        DynamicLossScaler {
            loss_scale: 8.0,
            scaling_factor: 2.0,
            interval: 2000,
            counter: 0,
        }
    }
}

impl DynamicLossScaler {
    pub fn new(loss_scale: f32, scaling_factor: f32, interval: u64) -> Self {
        DynamicLossScaler {
            loss_scale,
            scaling_factor,
            interval,
            counter: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepReason {
    Applied,
    SkippedInfNan,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub applied: bool,
    pub loss_scale_after: f32,
    pub reason: StepReason,
}

/// One optimizer step after `backward(scaler.loss_scale)`.
///
/// The counter is compared before it is incremented, so with `interval = N`
/// the scale first grows on clean step `N + 2`.
pub fn dynamic_step(scaler: &mut DynamicLossScaler, solver: &mut SgdSolver) -> Result<StepOutcome> {
    if solver.check_inf_or_nan_grad()? {
        // repeated halving would reach zero in f32
        scaler.loss_scale = (scaler.loss_scale / scaler.scaling_factor).max(f32::MIN_POSITIVE);
        scaler.counter = 0;
        return Ok(StepOutcome {
            applied: false,
            loss_scale_after: scaler.loss_scale,
            reason: StepReason::SkippedInfNan,
        });
    }
    solver.scale_grad(1.0 / scaler.loss_scale)?;
    solver.update()?;
    if scaler.counter > scaler.interval {
        scaler.loss_scale *= scaler.scaling_factor;
        scaler.counter = 0;
    }
    scaler.counter += 1;
    Ok(StepOutcome {
        applied: true,
        loss_scale_after: scaler.loss_scale,
        reason: StepReason::Applied,
    })
}

/// Backward with a fixed loss scale, unscale, update. `loss` must have been forwarded.
pub fn static_scaling_step(loss: &Variable, loss_scale: f32, solver: &mut SgdSolver) -> Result<()> {
    loss.backward(loss_scale, true)?;
    solver.scale_grad(1.0 / loss_scale)?;
    solver.update()
}

/// Loss-scaling policy applied around an optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub enum LossScaling {
    None,
    Static(f32),
    Dynamic(DynamicLossScaler),
}

impl LossScaling {
    /// The gradient seed to pass to `backward`.
    pub fn seed(&self) -> f32 {
        match self {
            LossScaling::None => 1.0,
            LossScaling::Static(s) => *s,
            LossScaling::Dynamic(d) => d.loss_scale,
        }
    }

    /// Parses `none`, `static:V` or `dynamic:INIT,FACTOR,INTERVAL`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad loss scaling `{text}`"));
        let (mode, rest) = text.split_once(':').unwrap_or((text, ""));
        match mode {
            "none" if rest.is_empty() => Ok(LossScaling::None),
            "static" => {
                let v: f32 = rest.parse().map_err(|_| bad())?;
                if v > 0.0 && v.is_finite() {
                    Ok(LossScaling::Static(v))
                } else {
                    Err(bad())
                }
            }
            "dynamic" => {
                let parts: Vec<&str> = rest.split(',').collect();
                let [init, factor, interval] = parts.as_slice() else {
                    return Err(bad());
                };
                let init: f32 = init.parse().map_err(|_| bad())?;
                let factor: f32 = factor.parse().map_err(|_| bad())?;
                let interval: u64 = interval.parse().map_err(|_| bad())?;
                if !(init > 0.0 && init.is_finite() && factor > 1.0 && factor.is_finite()) {
                    return Err(bad());
                }
                Ok(LossScaling::Dynamic(DynamicLossScaler::new(init, factor, interval)))
            }
            _ => Err(bad()),
        }
    }

    /// Inverse of [`LossScaling::parse`]; the dynamic counter is not part of it.
    pub fn descriptor(&self) -> String {
        match self {
            LossScaling::None => "none".to_string(),
            LossScaling::Static(v) => format!("static:{v}"),
            LossScaling::Dynamic(d) => format!("dynamic:{},{},{}", d.loss_scale, d.scaling_factor, d.interval),
        }
    }

    /// Unscales the gradients and updates, or skips the update on overflow in dynamic mode.
    pub fn step(&mut self, solver: &mut SgdSolver) -> Result<StepOutcome> {
        match self {
            LossScaling::Dynamic(d) => dynamic_step(d, solver),
            other => {
                let scale = other.seed();
                if scale != 1.0 {
                    solver.scale_grad(1.0 / scale)?;
                }
                solver.update()?;
                Ok(StepOutcome {
                    applied: true,
                    loss_scale_after: scale,
                    reason: StepReason::Applied,
                })
            }
        }
    }
}
