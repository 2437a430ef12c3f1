//! Generate the default dataset, train, and print the test metrics.

use hclnet::data::generate_dataset;
use hclnet::metrics::evaluate;
use hclnet::model::{init_model, train};
use hclnet::{DatasetConfig, FusionConfig, GuidanceMode, HclLocalizer, ModelConfig, TrainConfig};

fn main() -> hclnet::Result<()> {
    let (train_set, test_set) = generate_dataset(&DatasetConfig::default())?;
    let config = ModelConfig::default();
    let mut params = init_model(&config)?;
    train(&mut params, &config, &train_set, &TrainConfig::default())?;

    let localizer = HclLocalizer {
        params,
        config,
        fusion: FusionConfig::default(),
        guidance: GuidanceMode::Complementary,
        single_branch: false,
    };
    let report = evaluate(&localizer, &test_set, 0.2)?.report;
    println!("{report}");
    Ok(())
}
