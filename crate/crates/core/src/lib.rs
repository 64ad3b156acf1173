pub mod clock;
pub mod context;
pub mod graph;
pub mod lockmgr;
pub mod oracle;
pub mod pipeline;
pub mod store;
pub mod types;
pub mod workload;
