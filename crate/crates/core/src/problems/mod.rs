//! Benchmark problems: ellipse fitting and bundle adjustment.

pub mod ba;
pub mod ellipse;

pub use ba::{parse_bal, read_bal_file, synthetic_scene, write_bal, BaProblem, BaStructure, BalProblem, SceneOptions};
pub use ellipse::{generate_ellipse_data, moment_initial_params, EllipseData, EllipseParams, EllipseProblem};

/// BAL files whose counts match the two benchmark scenes.
pub const TRAFALGAR_FILE: &str = "problem-21-11315-pre.txt";
pub const DUBROVNIK_FILE: &str = "problem-16-22106-pre.txt";
