use celp::ce::LossWeights;
use celp::episodes::{sample_episode, FoldSplit, Fusion, Phase};
use celp::model::{train, Backbone, Model, PreparedEpisode, TrainSettings, TrainState};
use celp::rng::{SplitMix64, Stream};

fn settings(seed: u64, steps: usize) -> TrainSettings {
    TrainSettings {
        seed,
        total_steps: steps,
        base_lr: 0.1,
        hidden: 16,
        weights: LossWeights { w_ce: 0.1, w_aux: 1.0 },
        ..TrainSettings::default()
    }
}

#[test]
fn repeated_episode_drives_main_loss_down() {
    let backbone = Backbone::<f64>::standard();
    let split = FoldSplit::new(0).unwrap();
    let mut rng = SplitMix64::derive(5, Stream::Data);
    let episode = loop {
        let e = sample_episode(&split, Phase::Train, 1, &mut rng).unwrap();
        if !PreparedEpisode::new(&backbone, &e).unwrap().has_empty_support() {
            break e;
        }
    };
    let mut state = TrainState::<f64>::new(settings(5, 50), backbone.mid_channels()).unwrap();
    let losses: Vec<f64> = (0..50)
        .map(|_| state.train_episode(&backbone, &episode).unwrap().unwrap().l_main)
        .collect();
    let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let (first, last) = (avg(&losses[..10]), avg(&losses[40..]));
    assert!(last < first, "moving average went from {first} to {last}");
}

#[test]
fn training_is_deterministic_and_leaves_backbone_frozen() {
    let backbone = Backbone::<f32>::standard();
    let before = backbone.fingerprint();
    let split = FoldSplit::new(1).unwrap();
    let run = || {
        let mut totals = Vec::new();
        let state = train(settings(9, 20), &backbone, &split, |r| totals.push(r.total.to_bits())).unwrap();
        (state.decoder, totals)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la.len(), 20);
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_eq!(backbone.fingerprint(), before);
    assert_eq!(Backbone::<f32>::standard().fingerprint(), before);
}

#[test]
fn different_seeds_give_different_decoders() {
    let backbone = Backbone::<f32>::standard();
    let split = FoldSplit::new(0).unwrap();
    let a = train(settings(1, 5), &backbone, &split, |_| {}).unwrap();
    let b = train(settings(2, 5), &backbone, &split, |_| {}).unwrap();
    assert_ne!(a.decoder, b.decoder);
}

#[test]
fn predictions_are_binary_on_the_feature_grid() {
    let backbone = Backbone::<f64>::standard();
    let state = TrainState::<f64>::new(settings(4, 1), backbone.mid_channels()).unwrap();
    let model = Model::new(backbone.clone(), state.decoder).unwrap();
    let split = FoldSplit::new(2).unwrap();
    let mut rng = SplitMix64::new(4);
    let episode = sample_episode(&split, Phase::Test, 3, &mut rng).unwrap();
    let prepared = PreparedEpisode::new(&backbone, &episode).unwrap();
    for fusion in [Fusion::Average, Fusion::Vote(1), Fusion::Vote(3)] {
        if let Some(pred) = model.predict(&prepared, fusion, 1e-7).unwrap() {
            assert_eq!((pred.height(), pred.width()), Backbone::<f64>::output_grid(64, 64));
            assert!(pred.labels().iter().all(|&v| v <= 1));
        }
    }
}
