//! Per-run records shared by the main optimizer and the baselines.

/// Which term of the stepsize rule was active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepBranch {
    Constant,
    Linear,
    Quadratic,
}

impl StepBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            StepBranch::Constant => "constant",
            StepBranch::Linear => "linear",
            StepBranch::Quadratic => "quadratic",
        }
    }
}

impl std::fmt::Display for StepBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State of a run at one recorded iteration. `loss` is the full training
/// loss at the iterate the step departed from; `grad_norm` is the norm of
/// the gradient estimate driving the step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Cumulative samples drawn up to and including this iteration.
    pub samples: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Exact gradient norm, only evaluated when diagnostics ask for it.
    pub grad_norm_true: Option<f64>,
    pub stepsize: f64,
    pub branch: StepBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortInfo {
    pub iteration: usize,
    pub reason: String,
}

/// Complete record of one optimization run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    /// Index drawn uniformly from the iterate sequence; the randomized
    /// output rule of the variance-reduced methods. Absent for baselines
    /// that report the last iterate.
    pub output_index: Option<usize>,
    pub final_x: Vec<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub samples_total: usize,
    /// How many damping-threshold clamps fired during the run.
    pub clamp_warnings: usize,
    pub abort: Option<AbortInfo>,
}

impl RunTrace {
    /// Stable text form used by determinism checks and tests.
    pub fn canonical_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.17e},{:.17e},{:.17e},{}",
                r.k, r.samples, r.loss, r.grad_norm, r.stepsize, r.branch
            );
        }
        let _ = writeln!(
            out,
            "final,{},{:.17e},{:?},{}",
            self.samples_total, self.final_loss, self.output_index, self.iterations
        );
        out
    }
}
