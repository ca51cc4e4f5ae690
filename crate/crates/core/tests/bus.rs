use std::thread;

use oricf_core::bus::Bus;
use oricf_core::payload::{Payload, PayloadKind, Tensor, TensorData};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Small queues and slow-ish consumers force the producer to block.
    #[test]
    fn fifo_fan_out_and_no_loss(
        capacity in 1usize..5,
        subscribers in 1usize..4,
        late in 0usize..3,
        values in prop::collection::vec(any::<f64>(), 0..200),
        late_at in 0usize..200,
    ) {
        let bus = Bus::with_capacity([("/v", PayloadKind::Scalar)], capacity).unwrap();
        let publisher = bus.publisher("/v", "p").unwrap();
        let spawn = |sub: oricf_core::bus::Subscription| {
            thread::spawn(move || {
                let mut got = Vec::new();
                while let Some(d) = sub.recv() {
                    if let Payload::Scalar(v) = *d.payload {
                        got.push((d.seq, v.to_bits()));
                    }
                }
                got
            })
        };
        let early: Vec<_> = (0..subscribers).map(|_| spawn(bus.subscribe("/v").unwrap())).collect();
        let cut = late_at.min(values.len());
        for v in &values[..cut] {
            publisher.publish(Payload::Scalar(*v)).unwrap();
        }
        let later: Vec<_> = (0..late).map(|_| spawn(bus.subscribe("/v").unwrap())).collect();
        for v in &values[cut..] {
            publisher.publish(Payload::Scalar(*v)).unwrap();
        }
        drop(publisher);
        let expected: Vec<(u64, u64)> = values.iter().enumerate().map(|(i, v)| (i as u64, v.to_bits())).collect();
        for h in early {
            prop_assert_eq!(h.join().unwrap(), expected.clone());
        }
        for h in later {
            prop_assert_eq!(h.join().unwrap(), expected[cut..].to_vec());
        }
        prop_assert!(bus.wait_idle(std::time::Duration::from_secs(1)));
    }

    #[test]
    fn tensor_length_must_match_shape(shape in prop::collection::vec(0u32..6, 0..4), extra in 1usize..4, shrink in any::<bool>()) {
        let n: usize = shape.iter().map(|&d| d as usize).product();
        prop_assert!(Tensor::new(shape.clone(), TensorData::F32(vec![0.0; n])).is_ok());
        let wrong = if shrink && n >= extra { n - extra } else { n + extra };
        prop_assert!(Tensor::new(shape.clone(), TensorData::U8(vec![0; wrong])).is_err());
        prop_assert!(Tensor::new(shape, TensorData::I64(vec![0; wrong])).is_err());
    }
}

#[test]
fn image_is_published_on_tensor_channel_but_not_the_reverse() {
    let bus = Bus::new([("/t", PayloadKind::Tensor), ("/i", PayloadKind::Image)]).unwrap();
    let t = bus.publisher("/t", "p").unwrap();
    let i = bus.publisher("/i", "p").unwrap();
    let img = Payload::Tensor(Tensor::image(2, 2, 3, vec![0; 12]).unwrap());
    let flat = Payload::Tensor(Tensor::new(vec![4], TensorData::F32(vec![0.0; 4])).unwrap());
    assert!(t.publish(img.clone()).is_ok());
    assert!(i.publish(img).is_ok());
    assert!(i.publish(flat).is_err());
}
