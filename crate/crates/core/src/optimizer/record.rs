use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Adam,
    Lbfgs,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Adam => "adam",
            Stage::Lbfgs => "lbfgs",
        }
    }
}

/// JSON has no infinities; non-finite values travel as strings.
pub(crate) mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v)
        } else {
            Repr::Text(v.to_string())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One optimizer iteration, logged at the point where the gradient was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    pub restart: u32,
    pub stage: Stage,
    /// Value of the cost actually being minimized at this iteration.
    pub cost: f64,
    pub global_cost: f64,
    pub weight: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<IterationRow>,
    /// Lowest global cost seen.
    #[serde(with = "extended_f64")]
    pub best_cost: f64,
    pub best_iteration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_fidelity: Option<f64>,
    pub converged: bool,
    pub stalled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff_iteration: Option<u64>,
    pub restarts_used: u32,
    /// How the schedule weight enters the cost.
    pub weight_rule: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn new(weight_rule: impl Into<String>) -> Self {
        Self {
            rows: Vec::new(),
            best_cost: f64::INFINITY,
            best_iteration: None,
            final_fidelity: None,
            converged: false,
            stalled: false,
            handoff_iteration: None,
            restarts_used: 0,
            weight_rule: weight_rule.into(),
            warnings: Vec::new(),
        }
    }

    pub fn push(&mut self, row: IterationRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.iteration > last.iteration, "iterations must increase");
        }
        if row.global_cost < self.best_cost {
            self.best_cost = row.global_cost;
            self.best_iteration = Some(row.iteration);
        }
        self.rows.push(row);
    }

    pub fn has_fidelity(&self) -> bool {
        self.rows.iter().any(|r| r.fidelity.is_some())
    }

    /// Running minimum of the global cost.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.rows
            .iter()
            .scan(f64::INFINITY, |b, r| {
                *b = b.min(r.global_cost);
                Some(*b)
            })
            .collect()
    }

    /// First logged iteration whose global cost is below `threshold`.
    pub fn first_global_below(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.global_cost < threshold)
            .map(|r| r.iteration)
    }

    /// Rows with timing stripped, for reproducibility comparisons.
    pub fn untimed_rows(&self) -> Vec<IterationRow> {
        self.rows
            .iter()
            .cloned()
            .map(|mut r| {
                r.wall_ms = 0.0;
                r
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}
