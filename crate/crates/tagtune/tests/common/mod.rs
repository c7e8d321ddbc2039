#![allow(dead_code)]

use tagtune::config::Settings;
use tagtune::formats::DecoderCheckpoint;
use tagtune::harness::{pretrain_checkpoint, DecoderChoice, ExperimentSpec, GraphSource};

/// Small graph, tiny decoder and short fits; every cell runs in well under a
/// second.
pub fn small_settings() -> Settings {
    let mut s = Settings::default();
    s.synthetic.nodes = 45;
    s.pretrain.steps = 40;
    s.pretrain.transformer.d_model = 16;
    s.pretrain.transformer.d_ff = 24;
    s.pretrain.transformer.n_layers = 1;
    s.model.gnn_dims = vec![8];
    s.model.projector_hidden = 12;
    s.selftrain.train.epochs = 4;
    s.selftrain.train.optimizer.learning_rate = 1e-2;
    s.selftrain.threshold = 0.3;
    s.selftrain.max_rounds = 2;
    s.ratio = 0.2;
    s.ratios = vec![0.2];
    s.seeds = vec![0];
    s
}

pub fn small_decoder(settings: &Settings) -> DecoderCheckpoint {
    pretrain_checkpoint(settings, None).unwrap()
}

pub fn spec<'a>(settings: Settings, decoder: &'a DecoderCheckpoint) -> ExperimentSpec<'a> {
    ExperimentSpec {
        graph: GraphSource::from_settings(&settings).unwrap(),
        template: decoder.template.clone(),
        decoder: DecoderChoice::Transformer(&decoder.decoder),
        settings,
    }
}

/// `100 (b - a) / a`, rounded half away from zero to one decimal.
pub fn percent_gain(a: f64, b: f64) -> f64 {
    (1000.0 * (b - a) / a).round() / 10.0
}
