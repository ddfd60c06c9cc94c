pub mod aggregate;
pub mod checkpoint;
pub mod config;
pub mod log;
pub mod run;
pub mod wmcheck;

pub use aggregate::{aggregate, export_plots, iqm, mean_stderr, optimality_gap, AggregateReport, CurvePoint, MethodReport};
pub use checkpoint::Checkpoint;
pub use config::{parse_strict, Bounds, EvalSetSpec, RunConfig, SetMode};
pub use log::{LogHeader, RunEvent, RunLog, SCHEMA_VERSION};
pub use run::{run, run_baseline, run_shed, RunOptions};
pub use wmcheck::{run_worldmodel_check, FidelityConfig, FidelityReport};
