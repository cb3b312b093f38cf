use std::collections::HashSet;

use crate::backend::{AgentKind, AgentSpec};
use crate::tasks::TaskInstance;

/// Default id of the instructor agent in generated rosters.
pub const INSTRUCTOR_ID: &str = "instructor";

/// Discussion agents in speaking order, plus an optional instructor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    discussion: Vec<AgentSpec>,
    instructor: Option<AgentSpec>,
    ids: Vec<String>,
}

impl Roster {
    pub fn new(discussion: Vec<AgentSpec>, instructor: Option<AgentSpec>) -> Result<Self, String> {
        let mut seen = HashSet::new();
        for a in &discussion {
            if a.kind != AgentKind::Discussion {
                return Err(format!("{} is listed as a discussion agent but is an instructor", a.id));
            }
            if a.segment_ref.is_none() {
                return Err(format!("discussion agent {} has no segment", a.id));
            }
            if !seen.insert(a.id.as_str()) {
                return Err(format!("duplicate agent id {}", a.id));
            }
        }
        if let Some(i) = &instructor {
            if i.kind != AgentKind::Instructor || i.segment_ref.is_some() {
                return Err(format!("{} must be an instructor without a segment", i.id));
            }
            if seen.contains(i.id.as_str()) {
                return Err(format!("instructor id {} collides with a discussion agent", i.id));
            }
        }
        let ids = discussion.iter().map(|a| a.id.clone()).collect();
        Ok(Self { discussion, instructor, ids })
    }

    /// One discussion agent per segment (`a1`, `a2`, … in segment order), all
    /// bound to `backend`, plus an instructor when `instructor_backend` is given.
    pub fn for_task(task: &TaskInstance, backend: &str, instructor_backend: Option<&str>) -> Self {
        let discussion = task
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| AgentSpec::discussion(format!("a{}", i + 1), s.name.clone(), backend))
            .collect();
        let instructor = instructor_backend.map(|b| AgentSpec::instructor(INSTRUCTOR_ID, b));
        Self::new(discussion, instructor).expect("generated roster is well-formed")
    }

    pub fn discussion(&self) -> &[AgentSpec] {
        &self.discussion
    }

    pub fn discussion_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn instructor(&self) -> Option<&AgentSpec> {
        self.instructor.as_ref()
    }

    pub fn get(&self, id: &str) -> Option<&AgentSpec> {
        self.discussion.iter().chain(self.instructor.iter()).find(|a| a.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|a| a == id)
    }

    pub fn all(&self) -> impl Iterator<Item = &AgentSpec> {
        self.discussion.iter().chain(self.instructor.iter())
    }
}
