pub mod bandit;
pub mod embed;
pub mod qms;
pub mod sandbox;
pub mod patch;
pub mod pipeline;
pub mod rating;
pub mod llm;
pub mod prompts;
pub mod agent;
pub mod oracle;
pub mod hacker;
pub mod bus;
pub mod orchestrator;
