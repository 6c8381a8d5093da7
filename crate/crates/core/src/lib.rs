pub mod envs;
pub mod harness;
pub mod hiergraph;
pub mod msgpass;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod rewards;
pub mod trainer;
