use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChannelTable, ControllerTemplate, DeltaStructure, LfrModel};
use crate::error::Result;
use crate::format::{parse_json, to_json_pretty, StateSpaceFile};

/// On-disk form of an LFR model with an optional controller template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub delta: DeltaStructure,
    pub n_u: usize,
    pub n_y: usize,
    pub m: StateSpaceFile,
    pub channels: ChannelTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<ControllerTemplate>,
}

impl ModelFile {
    pub fn new(model: &LfrModel, template: Option<&ControllerTemplate>) -> Self {
        Self {
            delta: model.delta.clone(),
            n_u: model.n_u,
            n_y: model.n_y,
            m: StateSpaceFile::from_system(&model.m),
            channels: model.channels.clone(),
            template: template.cloned(),
        }
    }

    pub fn model(&self) -> Result<LfrModel> {
        let m = self.m.to_system("m")?;
        let model = LfrModel::new(m, self.delta.clone(), self.n_u, self.n_y, self.channels.clone())?;
        if let Some(t) = &self.template {
            model.check_template(t)?;
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json("model file", text)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_pretty(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }
}
