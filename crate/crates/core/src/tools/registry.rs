use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::{Tool, ToolCatalog, ToolDescriptor, ToolMenu};
use crate::plan_dsl::JOIN_TOOL;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool '{0}' is already registered")]
    DuplicateTool(String),
    #[error("'{0}' is reserved")]
    ReservedName(String),
    #[error("no tools are registered")]
    EmptyRegistry,
}

/// Built once, then read-only. Keeps registration order.
#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
    descriptors: Vec<ToolDescriptor>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.descriptors.iter().map(|d| &d.name)).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), RegistryError> {
        let descriptor = tool.descriptor().clone();
        if descriptor.name == JOIN_TOOL {
            return Err(RegistryError::ReservedName(descriptor.name));
        }
        if self.index.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateTool(descriptor.name));
        }
        self.index.insert(descriptor.name.clone(), self.tools.len());
        self.tools.push(tool);
        self.descriptors.push(descriptor);
        Ok(())
    }

    pub fn resolve(&self, name: &str) -> Option<Arc<dyn Tool>> {
        self.index.get(name).map(|&i| Arc::clone(&self.tools[i]))
    }

    pub fn descriptors(&self) -> &[ToolDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Planner view: tools in registration order with `join` appended.
    pub fn describe_all(&self) -> Result<ToolMenu, RegistryError> {
        ToolMenu::from_descriptors(&self.descriptors).ok_or(RegistryError::EmptyRegistry)
    }
}

impl ToolCatalog for ToolRegistry {
    fn lookup(&self, name: &str) -> Option<&ToolDescriptor> {
        self.index.get(name).map(|&i| &self.descriptors[i])
    }
}
