pub mod agents;
pub mod feedback;
pub mod geom;
pub mod llm;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod scenario;
pub mod sim;
