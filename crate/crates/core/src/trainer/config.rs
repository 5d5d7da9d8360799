use crate::art::GammaInit;
use crate::config;
use crate::error::{Error, Result};
use crate::rfp::check_beta;

/// Evaluation protocol. Boxes are always given; PREDCLS also gives classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Predcls,
    Sgcls,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Sgcls, Task::Predcls];

    pub fn name(self) -> &'static str {
        match self {
            Task::Predcls => "predcls",
            Task::Sgcls => "sgcls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predcls" => Ok(Task::Predcls),
            "sgcls" => Ok(Task::Sgcls),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub task: Task,
    pub art: bool,
    pub rfp: bool,
    pub hmp: bool,
    /// Layer-weight start when ART is on; ignored otherwise.
    pub gamma_init: GammaInit,
    pub tau: f64,
    pub layers: usize,
    pub steps: usize,
    pub beta: f64,
    pub dim: usize,
    /// Background pairs sampled per ground-truth pair.
    pub bg_ratio: usize,
    /// Joint gradient norm cap per step; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            task: Task::Sgcls,
            art: true,
            rfp: true,
            hmp: true,
            gamma_init: GammaInit::Alternating,
            tau: 0.5,
            layers: 5,
            steps: 4,
            beta: -0.5,
            dim: 32,
            bg_ratio: 3,
            max_grad_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one transformer layer is required".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(Error::Config(format!("max_grad_norm must be finite and >= 0, got {}", self.max_grad_norm)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// The layer-weight start actually used: ART off pins all weight on the
    /// last layer and freezes it.
    pub fn effective_gamma_init(&self) -> GammaInit {
        if self.art {
            self.gamma_init
        } else {
            GammaInit::LastLayer
        }
    }

    /// Short label for the module toggles, e.g. `ART+RFP` or `none`.
    pub fn modules_label(&self) -> String {
        let mut parts = Vec::new();
        if self.art {
            parts.push("ART");
        }
        if self.rfp {
            parts.push("RFP");
        }
        if self.hmp {
            parts.push("HMP");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn to_kv(&self) -> String {
        config::write_kv(&[
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("seed", self.seed.to_string()),
            ("task", self.task.name().to_string()),
            ("art", self.art.to_string()),
            ("rfp", self.rfp.to_string()),
            ("hmp", self.hmp.to_string()),
            ("gamma_init", self.gamma_init.name().to_string()),
            ("tau", self.tau.to_string()),
            ("layers", self.layers.to_string()),
            ("steps", self.steps.to_string()),
            ("beta", self.beta.to_string()),
            ("dim", self.dim.to_string()),
            ("bg_ratio", self.bg_ratio.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
        ])
    }

    /// Overrides fields present in `map`; unknown keys are ignored.
    pub fn apply_kv(&mut self, map: &std::collections::BTreeMap<String, String>) -> Result<()> {
        use config::set;
        set(map, "epochs", &mut self.epochs)?;
        set(map, "learning_rate", &mut self.learning_rate)?;
        set(map, "momentum", &mut self.momentum)?;
        set(map, "seed", &mut self.seed)?;
        if let Some(t) = map.get("task") {
            self.task = Task::parse(t)?;
        }
        set(map, "art", &mut self.art)?;
        set(map, "rfp", &mut self.rfp)?;
        set(map, "hmp", &mut self.hmp)?;
        if let Some(g) = map.get("gamma_init") {
            self.gamma_init = GammaInit::parse(g)?;
        }
        set(map, "tau", &mut self.tau)?;
        set(map, "layers", &mut self.layers)?;
        set(map, "steps", &mut self.steps)?;
        set(map, "beta", &mut self.beta)?;
        set(map, "dim", &mut self.dim)?;
        set(map, "bg_ratio", &mut self.bg_ratio)?;
        set(map, "max_grad_norm", &mut self.max_grad_norm)?;
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(&config::parse_kv(text)?)?;
        Ok(cfg)
    }
}
