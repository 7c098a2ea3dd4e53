pub mod agents;
pub mod clinical;
pub mod config;
pub mod eval;
pub mod ingest;
pub mod llm;
pub mod orchestrator;
pub mod sandbox;
pub mod smb;
pub mod synthetic;
