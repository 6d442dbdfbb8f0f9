pub mod corpus;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod retrieval;
pub mod tokenizer;
pub mod training;
