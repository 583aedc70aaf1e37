pub mod config;
pub mod csvio;
pub mod diffcore;
pub mod evalreport;
pub mod experiment;
pub mod metatrain;
pub mod models;
pub mod riskcore;
pub mod seeding;
pub mod selftest;
pub mod taskgen;
