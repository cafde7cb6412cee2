//! Prediction error, regular-versus-rotated evaluation and plot output.

mod metrics;
mod plot;
mod report;

pub use metrics::{nrmse, nrmse_from};
pub use plot::{plot_series, read_prediction_csv, render_svg, write_plot_series, write_prediction_csv, PlotPoint, PredictionRow};
pub use report::{evaluate, predict, write_results_csv, EvalReport, EvalRow, SetResult, Table};
