mod common;

use common::checks::{ablation_listings, cross_output_lengths, full_config, parameter_count};
use fusionattn::{DatasetSchema, FusionModel, Modality, ModelDims};

use Modality::{Audio as A, Text as T, Vision as V};

#[test]
fn cross_trimodal_has_six_attention_modules() {
    let model = FusionModel::build(&full_config("cross", &Modality::ALL), 0).unwrap();
    assert_eq!(model.attention_module_count(), 6);
    let self_model = FusionModel::build(&full_config("self", &Modality::ALL), 0).unwrap();
    assert_eq!(self_model.attention_module_count(), 3);
    let both = FusionModel::build(&full_config("cross+self", &Modality::ALL), 0).unwrap();
    assert_eq!(both.attention_module_count(), 9);
}

#[test]
fn cross_outputs_follow_target_timeline() {
    let dims = ModelDims::for_schema(&DatasetSchema::DESK, 4, 2);
    let lengths = cross_output_lengths(dims);
    assert_eq!(lengths.len(), 6);
    for (t, s, rows, expected) in lengths {
        assert_eq!(rows, expected, "{t}<-{s}");
    }
}

#[test]
fn statistical_pooling_width_is_independent_of_modality_count() {
    for ms in [vec![T], vec![A, T], vec![A, V, T]] {
        let kind = if ms.len() == 1 { "self" } else { "cross" };
        assert_eq!(full_config(kind, &ms).classifier_input_width(), 240);
        assert_eq!(full_config("self", &ms).classifier_input_width(), 240);
    }
    assert_eq!(full_config("cross+self", &Modality::ALL).classifier_input_width(), 480);
    assert_eq!(full_config("cross-nosp", &Modality::ALL).classifier_input_width(), 6 * 120);
    assert_eq!(full_config("self-nosp", &Modality::ALL).classifier_input_width(), 3 * 120);
}

#[test]
fn ablations_drop_exactly_the_removed_modality() {
    for kind in ["self", "cross"] {
        for removed in [vec![A], vec![V], vec![T]] {
            let (expected, got) = ablation_listings(kind, &removed);
            assert_eq!(got, expected, "{kind} without {removed:?}");
        }
    }
    for removed in [vec![A, V], vec![A, T], vec![V, T]] {
        let (expected, got) = ablation_listings("self", &removed);
        assert_eq!(got, expected, "self without {removed:?}");
    }
}

#[test]
fn parameter_counts_match_closed_form() {
    // GRU direction: 3·h·(d + h) + 6·h; convolution: t_out·t_in + t_out;
    // attention: 4·w² + w with w = 2h; classifier: 2w·h + h + h·7 + 7.
    let h = 60;
    let w = 2 * h;
    let gru = |d: usize| 2 * (3 * h * (d + h) + 6 * h);
    let audio = 500 * 1000 + 500 + gru(120);
    let vision = 25 * 32 + 25 + gru(2048);
    let text = gru(300);
    let mha = 4 * w * w + w;
    let classifier = 2 * w * h + h + h * 7 + 7;
    let encoders = audio + vision + text;
    assert_eq!(parameter_count("self", &Modality::ALL), encoders + 3 * mha + classifier);
    assert_eq!(parameter_count("cross", &Modality::ALL), encoders + 6 * mha + classifier);
    assert_eq!(parameter_count("cross", &[A, T]), audio + text + 2 * mha + classifier);
    assert_eq!(parameter_count("self", &[V]), vision + mha + classifier);
    let wide = 4 * w * h + h + h * 7 + 7;
    assert_eq!(parameter_count("cross+self", &Modality::ALL), 2 * encoders + 9 * mha + wide);
}
