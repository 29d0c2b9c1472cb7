pub mod dicom;
pub mod rules;
pub mod pseudonym;
pub mod engine;
pub mod orchestrator;
pub mod corpus;
pub mod regression;
