use oricf_core::inference::{
    builtin_backends, stub_detect, DetectorConfig, InferenceContext, LocalModel, ModelRegistry,
};
use oricf_core::offload::RetryPolicy;
use oricf_core::orchestrator::{run_spec, RunOptions};
use oricf_core::params::{params_from_yaml, Params};
use oricf_core::payload::{payload_to_json_line, AudioChunk, Payload, Tensor};
use oricf_core::registry::Registry;
use oricf_core::spec::parse_spec;
use proptest::prelude::*;

fn image(max: u32) -> impl Strategy<Value = Tensor> {
    (1u32..=max, 1u32..=max, prop_oneof![Just(1u32), Just(3u32)], any::<u8>()).prop_flat_map(|(h, w, c, bias)| {
        // Mix uniform noise with mostly-bright images so both branches of the
        // threshold are exercised.
        let n = (h * w * c) as usize;
        prop_oneof![
            prop::collection::vec(any::<u8>(), n),
            prop::collection::vec(bias.max(150)..=255u8, n),
        ]
        .prop_map(move |px| Tensor::image(h, w, c, px).unwrap())
    })
}

/// Recomputes every tile mean pixel by pixel.
fn oracle(img: &Tensor, threshold: u8, block: usize) -> Vec<(usize, usize, f64)> {
    let (h, w, c, px) = img.as_hwc().unwrap();
    let mut hits = Vec::new();
    let (rows, cols) = (h / block, w / block);
    for ty in 0..rows {
        for tx in 0..cols {
            let mut total = 0.0f64;
            let mut n = 0usize;
            for y in 0..h {
                for x in 0..w {
                    if y / block == ty && x / block == tx {
                        for ch in 0..c {
                            total += f64::from(px[(y * w + x) * c + ch]);
                            n += 1;
                        }
                    }
                }
            }
            let mean = total / n as f64;
            if mean > f64::from(threshold) {
                hits.push((tx, ty, mean));
            }
        }
    }
    hits
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn detector_matches_tile_mean_oracle(img in image(64), threshold in any::<u8>(), block in 1usize..=16) {
        let cfg = DetectorConfig { threshold, block, label: "person".into() };
        let got = stub_detect(&img, &cfg).unwrap();
        let want = oracle(&img, threshold, block);
        let (h, w, _, _) = img.as_hwc().unwrap();
        prop_assert_eq!(got.len(), want.len());
        for (d, (tx, ty, mean)) in got.iter().zip(want) {
            prop_assert_eq!(&d.label, "person");
            prop_assert_eq!(d.score, (mean / 255.0) as f32);
            prop_assert_eq!(d.bbox.x0, ((tx * block) as f64 / w as f64) as f32);
            prop_assert_eq!(d.bbox.y0, ((ty * block) as f64 / h as f64) as f32);
            prop_assert_eq!(d.bbox.x1, (((tx + 1) * block) as f64 / w as f64) as f32);
            prop_assert_eq!(d.bbox.y1, (((ty + 1) * block) as f64 / h as f64) as f32);
        }
    }
}

fn case() -> impl Strategy<Value = (&'static str, &'static str, Payload, InferenceContext)> {
    let ctx = prop::option::of(-1e6f64..1e6).prop_map(|v| {
        let mut c = InferenceContext::default();
        if let Some(v) = v {
            c.latest.insert("/n".into(), Payload::Scalar(v));
        }
        c
    });
    prop_oneof![
        image(32).prop_map(|t| (
            "stub-detector",
            "threshold: 128",
            Payload::Tensor(t),
            InferenceContext::default()
        )),
        ("\\PC{0,30}", ctx).prop_map(|(q, c)| ("template-llm", "template: '{query} / {chan:/n}'", Payload::text(q), c)),
        (0i16..4, prop::collection::vec(any::<i16>(), 0..16)).prop_map(|(first, rest)| {
            let samples = std::iter::once(first).chain(rest).collect();
            (
                "token-asr",
                "vocab: [zero, one, two]",
                Payload::Audio(AudioChunk {
                    sample_rate_hz: 16000,
                    samples,
                }),
                InferenceContext::default(),
            )
        }),
        "\\PC{0,30}".prop_map(|s| ("identity", "{}", Payload::text(s), InferenceContext::default())),
        image(16).prop_map(|t| ("identity-tensor", "{}", Payload::Tensor(t), InferenceContext::default())),
        image(16).prop_map(|t| (
            "identity-detections",
            "{}",
            Payload::Tensor(t),
            InferenceContext::default()
        )),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn backends_are_deterministic_and_kind_disciplined((backend, config, input, ctx) in case()) {
        let table = builtin_backends();
        let b = table[backend].as_ref();
        let m = LocalModel::load(b, &params_from_yaml(config).unwrap()).unwrap();
        let out = m.infer(std::slice::from_ref(&input), &ctx).unwrap();
        let again = m.infer(std::slice::from_ref(&input), &ctx).unwrap();
        prop_assert_eq!(payload_to_json_line(&out), payload_to_json_line(&again));
        prop_assert!(b.descriptor().output_kind.admits(&out));
        let fresh = LocalModel::load(b, &params_from_yaml(config).unwrap()).unwrap();
        prop_assert_eq!(payload_to_json_line(&fresh.infer(&[input], &ctx).unwrap()), payload_to_json_line(&out));
    }
}

#[test]
fn wrong_input_kind_is_rejected_before_the_model_runs() {
    let reg = ModelRegistry::with_builtins();
    let h = reg.load_model("d", "stub-detector", &Params::new()).unwrap();
    assert!(reg
        .infer(&h, &[Payload::text("x")], &InferenceContext::default())
        .is_err());
    assert!(reg.infer(&h, &[], &InferenceContext::default()).is_err());
    assert!(reg.unload(&h));
    assert!(reg
        .infer(&h, &[Payload::Scalar(1.0)], &InferenceContext::default())
        .is_err());
}

#[test]
fn detector_is_exchangeable_by_backend_field_only() {
    let demo = include_str!("../../../pipelines/demo.yaml");
    let swapped = demo.replace("backend: stub-detector", "backend: identity-detections");
    assert_ne!(demo, swapped);
    let spec = parse_spec(&swapped).unwrap();
    let report = run_spec(
        &spec,
        &Registry::builtin(),
        RetryPolicy::default(),
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(report.nodes["person_detector"].messages_in, 2);
    assert_eq!(report.nodes["answer_llm"].messages_out, 1);
}
