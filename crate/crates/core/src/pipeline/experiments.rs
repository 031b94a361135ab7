use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::{distill_with, Prepared, Trained};
use super::{AlignmentSpec, RunMetrics};
use crate::error::{Error, Result};
use crate::losses::Components;
use crate::models::{InspirerModel, TargetModel};

/// A stage-2 component that an ablation arm switches off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    OutputDistill,
    FeatureDistill,
    Consistency,
}

impl Removal {
    pub const ALL: [Removal; 3] = [Removal::FeatureDistill, Removal::Consistency, Removal::OutputDistill];

    pub fn name(self) -> &'static str {
        match self {
            Removal::OutputDistill => "output_distill",
            Removal::FeatureDistill => "feature_distill",
            Removal::Consistency => "consistency",
        }
    }

    pub fn apply(self, mut c: Components) -> Components {
        match self {
            Removal::OutputDistill => c.output_distill = false,
            Removal::FeatureDistill => c.feature_distill = false,
            Removal::Consistency => c.consistency = false,
        }
        c
    }

    /// Parses a comma-separated list such as `output_distill,consistency`.
    pub fn parse_list(s: &str) -> Result<Vec<Removal>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let r: Removal = part.parse()?;
            if !out.contains(&r) {
                out.push(r);
            }
        }
        if out.is_empty() {
            return Err(Error::config("no components to remove"));
        }
        Ok(out)
    }
}

impl FromStr for Removal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output_distill" => Ok(Removal::OutputDistill),
            "feature_distill" => Ok(Removal::FeatureDistill),
            "consistency" => Ok(Removal::Consistency),
            other => Err(Error::config(format!(
                "unknown component {other:?}; expected output_distill, feature_distill or consistency"
            ))),
        }
    }
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One arm of a comparison.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub name: String,
    pub components: Components,
    pub alignment: AlignmentSpec,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub model: TargetModel,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub alignment: String,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ComparisonTable {
    pub arms: Vec<ArmResult>,
}

impl ComparisonTable {
    pub fn rows(&self) -> Vec<TableRow> {
        self.arms
            .iter()
            .map(|a| TableRow {
                name: a.name.clone(),
                alignment: a.alignment.to_string(),
                dev_accuracy: a.dev_accuracy,
                test_accuracy: a.test_accuracy,
            })
            .collect()
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Plain-text table, one arm per line.
    pub fn render(&self) -> String {
        let mut s = format!("{:<24} {:<20} {:>8} {:>8}\n", "arm", "alignment", "dev", "test");
        for r in self.rows() {
            s.push_str(&format!(
                "{:<24} {:<20} {:>8.4} {:>8.4}\n",
                r.name, r.alignment, r.dev_accuracy, r.test_accuracy
            ));
        }
        s
    }
}

fn arm(
    prep: &Prepared,
    inspirer: &InspirerModel,
    name: String,
    alignment: &AlignmentSpec,
    components: Components,
) -> Result<ArmResult> {
    let Trained { model, metrics } = distill_with(prep, inspirer, alignment, &components)?;
    Ok(ArmResult {
        name,
        components,
        alignment: alignment.clone(),
        dev_accuracy: metrics.best_dev_accuracy().unwrap_or(0.0),
        test_accuracy: metrics.test_accuracy().unwrap_or(0.0),
        model,
        metrics,
    })
}

/// The full configuration, then one arm per removal, all with the run seed.
pub fn run_ablation(prep: &Prepared, inspirer: &InspirerModel, removals: &[Removal]) -> Result<ComparisonTable> {
    let alignment = prep.config.alignment()?;
    let base = prep.config.distill.components;
    let mut table = ComparisonTable::default();
    table.arms.push(arm(prep, inspirer, "full".into(), &alignment, base)?);
    for &r in removals {
        table
            .arms
            .push(arm(prep, inspirer, format!("without_{r}"), &alignment, r.apply(base))?);
    }
    Ok(table)
}

/// One stage-2 run per alignment, all from the same inspirer.
pub fn run_alignment_sweep(
    prep: &Prepared,
    inspirer: &InspirerModel,
    specs: &[AlignmentSpec],
) -> Result<ComparisonTable> {
    let components = prep.config.distill.components;
    for s in specs {
        s.validate(inspirer.config.layers, &prep.config.target.filter_sizes)?;
    }
    let mut table = ComparisonTable::default();
    for s in specs {
        table.arms.push(arm(prep, inspirer, s.to_string(), s, components)?);
    }
    Ok(table)
}

/// Reads one alignment per line; blank lines and `#` comments are skipped.
pub fn parse_spec_list(text: &str) -> Result<Vec<AlignmentSpec>> {
    let specs = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect::<Result<Vec<AlignmentSpec>>>()?;
    if specs.is_empty() {
        return Err(Error::config("alignment list is empty"));
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removals_parse_and_switch_off_one_component() {
        let rs = Removal::parse_list("output_distill, consistency").unwrap();
        assert_eq!(rs, vec![Removal::OutputDistill, Removal::Consistency]);
        let c = Removal::FeatureDistill.apply(Components::default());
        assert!(c.output_distill && c.consistency && !c.feature_distill);
        assert!(Removal::parse_list("dropout").is_err());
    }

    #[test]
    fn spec_lists_skip_comments() {
        let specs = parse_spec_list("# monotone\n{0,1}-{2,5}\n\n{1,0}-{2,5}\n").unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].pairs(), &[(1, 2), (0, 5)]);
    }
}
