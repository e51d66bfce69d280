pub mod corpus;
pub mod gateway;
pub mod harness;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod retrieval;
pub mod templates;
pub mod textproc;
