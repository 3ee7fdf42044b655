use std::sync::OnceLock;

use haipw_core::{Arm, Unit};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ClientError;

/// Outcome scale the model must answer on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub integer_valued: bool,
}

/// Prompt recipe for one study.
///
/// `system_template` describes the participant; `{column}` placeholders are
/// replaced by that unit's covariate values and `{unit_id}` by its id. Use
/// `{{` and `}}` for literal braces next to identifier text. All other fields
/// are used verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system_template: String,
    pub treatment_text: String,
    pub control_text: String,
    pub outcome_question: String,
    pub instruction_pool: Vec<String>,
    pub scale: Scale,
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

/// Renders a covariate value; whole numbers print without a fractional part.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl PromptTemplate {
    /// Placeholder names used by `system_template`, in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        placeholder_regex()
            .captures_iter(&self.system_template)
            .filter_map(|c| c.get(1).map(|m| m.as_str().to_owned()))
            .collect()
    }

    /// Checks the template against a covariate schema.
    pub fn validate(&self, covariate_names: &[String]) -> Result<(), ClientError> {
        if self.instruction_pool.is_empty() {
            return Err(ClientError::InvalidTemplate("instruction_pool is empty".into()));
        }
        if !(self.scale.min < self.scale.max) {
            return Err(ClientError::InvalidTemplate(format!(
                "scale.min ({}) must be below scale.max ({})",
                self.scale.min, self.scale.max
            )));
        }
        for name in self.placeholders() {
            if name != "unit_id" && !covariate_names.contains(&name) {
                return Err(ClientError::UnboundPlaceholder(name));
            }
        }
        Ok(())
    }

    fn render_system(&self, covariate_names: &[String], unit: &Unit) -> Result<String, ClientError> {
        let mut out = String::with_capacity(self.system_template.len());
        let mut last = 0;
        for caps in placeholder_regex().captures_iter(&self.system_template) {
            let whole = caps.get(0).expect("match");
            out.push_str(&self.system_template[last..whole.start()]);
            last = whole.end();
            match caps.get(1) {
                None => out.push_str(&whole.as_str()[..1]),
                Some(name) if name.as_str() == "unit_id" => out.push_str(&unit.id),
                Some(name) => {
                    let j = covariate_names
                        .iter()
                        .position(|c| c == name.as_str())
                        .ok_or_else(|| ClientError::UnboundPlaceholder(name.as_str().to_owned()))?;
                    let value = unit.covariates.get(j).ok_or_else(|| ClientError::UnboundPlaceholder(name.as_str().to_owned()))?;
                    out.push_str(&format_value(*value));
                }
            }
        }
        out.push_str(&self.system_template[last..]);
        Ok(out)
    }

    /// The instruction used for a prompt index, cycling through the pool.
    pub fn instruction(&self, prompt_index: usize) -> &str {
        &self.instruction_pool[prompt_index % self.instruction_pool.len()]
    }

    /// `(system, user)` prompts for one unit under one arm.
    pub fn render(
        &self,
        covariate_names: &[String],
        unit: &Unit,
        arm: Arm,
        prompt_index: usize,
    ) -> Result<(String, String), ClientError> {
        if self.instruction_pool.is_empty() {
            return Err(ClientError::InvalidTemplate("instruction_pool is empty".into()));
        }
        let system = self.render_system(covariate_names, unit)?;
        let arm_text = match arm {
            Arm::Treated => &self.treatment_text,
            Arm::Control => &self.control_text,
        };
        let user = format!("{arm_text}\n\n{}\n\n{}", self.outcome_question, self.instruction(prompt_index));
        Ok((system, user))
    }
}

/// Free-function form of [`PromptTemplate::render`].
pub fn render_prompts(
    template: &PromptTemplate,
    covariate_names: &[String],
    unit: &Unit,
    arm: Arm,
    prompt_index: usize,
) -> Result<(String, String), ClientError> {
    template.render(covariate_names, unit, arm, prompt_index)
}
