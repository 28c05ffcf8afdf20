pub mod corpus;
pub mod dataset;
pub mod llmclient;
pub mod nereval;
pub mod pipeline;
pub mod textmetrics;
