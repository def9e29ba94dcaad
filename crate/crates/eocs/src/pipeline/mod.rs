//! End-to-end pipeline: dataset generation via the enumeration oracle, the
//! training loop, evaluation metrics, method comparison and plotting.

mod compare;
mod dataset;
mod metrics;
mod plot;
mod train;

pub use compare::{compare, corpus_config, sample_problems, Method};
pub use dataset::{
    generate_dataset, generate_split, load_dataset, save_dataset, Dataset, Sample, SplitTag,
};
pub use metrics::{
    evaluate, median_duration, EvalReport, MethodReport, SCC_EXACT_TOL,
};
pub use plot::render_curves_svg;
pub use train::{
    fit_scaling, oc_accuracy, read_curves, train, write_curves, CurvePoint, PreparedSamples,
    TrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("could not draw enough distinct valid samples")]
    ExhaustedSampling,
    #[error("pipeline IO failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Search(#[from] crate::search::SearchError),
    #[error(transparent)]
    Fault(#[from] crate::fault::FaultError),
}
