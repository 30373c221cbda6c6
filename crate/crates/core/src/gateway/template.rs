use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Which gateway call a template serves; determines required placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Initial,
    Summary,
    Compare,
    CompareWithSummary,
}

impl Strategy {
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Strategy::Initial => &["{class}"],
            Strategy::Summary | Strategy::Compare => &["{class_list}"],
            Strategy::CompareWithSummary => &["{class_list}", "{summary}"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    #[serde(default)]
    pub role_preamble: String,
}

impl PromptTemplate {
    pub fn validate(&self, strategy: Strategy) -> Result<(), GatewayError> {
        if self.name.trim().is_empty() {
            return Err(GatewayError::InvalidTemplate {
                name: self.name.clone(),
                reason: "template name is empty".into(),
            });
        }
        for placeholder in strategy.required_placeholders() {
            if !self.body.contains(placeholder) {
                return Err(GatewayError::InvalidTemplate {
                    name: self.name.clone(),
                    reason: format!("body is missing placeholder {placeholder}"),
                });
            }
        }
        Ok(())
    }

    pub fn render(&self, vars: &Vars<'_>) -> String {
        let mut out = self.body.clone();
        if let Some(class) = vars.class {
            out = out.replace("{class}", class);
        }
        if let Some(list) = vars.class_list {
            out = out.replace("{class_list}", &render_class_list(list));
        }
        if let Some(summary) = vars.summary {
            out = out.replace("{summary}", summary);
        }
        out
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Vars<'a> {
    pub class: Option<&'a str>,
    pub class_list: Option<&'a [String]>,
    pub summary: Option<&'a str>,
}

/// Bullet list, one class per line.
pub fn render_class_list(classes: &[String]) -> String {
    classes
        .iter()
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Appended to a comparison prompt after its response failed to parse.
pub const FORMAT_REINFORCEMENT: &str = "\n\nIMPORTANT: reply ONLY in the required format. \
For each category write a line \"### <category name>\" exactly as given above, \
followed by one or more lines that start with \"- \". Do not skip any category.";

const PREAMBLE: &str =
    "You are an expert in visual recognition who describes what objects look like in photographs.";

const OUTPUT_FORMAT: &str =
    "For every category write a heading line \"### <category name>\" using the \
name exactly as given, followed by bullet lines starting with \"- \", one visual feature per line.";

/// The four prompts the tree builder needs. Editable; loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub initial: PromptTemplate,
    pub summary: PromptTemplate,
    pub compare: PromptTemplate,
    pub compare_with_summary: PromptTemplate,
}

impl TemplateSet {
    pub fn validate(&self) -> Result<(), GatewayError> {
        self.initial.validate(Strategy::Initial)?;
        self.summary.validate(Strategy::Summary)?;
        self.compare.validate(Strategy::Compare)?;
        self.compare_with_summary
            .validate(Strategy::CompareWithSummary)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            initial: PromptTemplate {
                name: "initial".into(),
                role_preamble: PREAMBLE.into(),
                body: "What are useful visual features for distinguishing a {class} in a photo?\n\
                       Answer with a bulleted list: one feature per line, each line starting with \"- \"."
                    .into(),
            },
            summary: PromptTemplate {
                name: "summary".into(),
                role_preamble: PREAMBLE.into(),
                body: "Summarize the overarching visual characteristics shared by the following categories:\n\
                       {class_list}\n\nAnswer with a single short sentence."
                    .into(),
            },
            compare: PromptTemplate {
                name: "compare".into(),
                role_preamble: PREAMBLE.into(),
                body: format!(
                    "Compare the following categories with each other and list the visual features \
                     that tell each one apart from the others in this group:\n{{class_list}}\n\n{OUTPUT_FORMAT}"
                ),
            },
            compare_with_summary: PromptTemplate {
                name: "compare_with_summary".into(),
                role_preamble: PREAMBLE.into(),
                body: format!(
                    "The following categories share these characteristics: {{summary}}\n\
                     {{class_list}}\n\nGiven what they have in common, list for each category the visual \
                     features that distinguish it from the other members of the group.\n\n{OUTPUT_FORMAT}"
                ),
            },
        }
    }
}
