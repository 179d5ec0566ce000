use edquant::formats::{lookup, quantize_tensor, REGISTRY_NAMES};
use edquant::tensorio::{pack_codes, unpack_codes, DType, DenseTensor, TensorContainer};
use edquant::Matrix;
use proptest::prelude::*;

fn registry_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(REGISTRY_NAMES.to_vec())
}

proptest! {
    #[test]
    fn element_rounding_is_nearest(name in registry_name(), x in -10.0f64..10.0) {
        let e = lookup(name).unwrap().as_block().element;
        let r = e.round(x).unwrap();
        let best = e
            .enumerate_values()
            .into_iter()
            .map(|v| (x - v).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(((x - r).abs() - best).abs() <= 1e-12 * best.max(1.0));
        // rounding is idempotent
        prop_assert_eq!(e.round(r).unwrap(), r);
    }

    #[test]
    fn element_rounding_is_monotone(name in registry_name(), x in -10.0f64..10.0, d in 0.0f64..5.0) {
        let e = lookup(name).unwrap().as_block().element;
        prop_assert!(e.round(x).unwrap() <= e.round(x + d).unwrap());
    }

    #[test]
    fn block_error_within_half_step(
        name in registry_name(),
        vals in prop::collection::vec(-500.0f64..500.0, 1..40),
    ) {
        let fmt = lookup(name).unwrap().as_block().with_block_size(vals.len());
        // 500 is inside every registry format's range (b4int3 tops out at 768)
        let (qb, choice) = fmt.quantize_block(&vals).unwrap();
        prop_assert!(!choice.clamped);
        let scale = fmt.scale.decode(qb.scale_code);
        let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // the chosen scale is the smallest one that covers the block
        prop_assert!(max / scale <= fmt.element.max_value());
        if max > 0.0 && choice.exponent > fmt.scale.min_exponent() {
            prop_assert!(max / (scale / 2.0) > fmt.element.max_value());
        }
        let decoded = fmt.dequantize_block(&qb);
        for (v, q) in vals.iter().zip(&decoded) {
            let grid: Vec<f64> = fmt.element.enumerate_values().iter().map(|p| p * scale).collect();
            let best = grid.iter().map(|g| (v - g).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(((v - q).abs() - best).abs() <= 1e-12 * best.max(1e-300));
        }
    }

    #[test]
    fn tensor_quantization_is_idempotent(
        name in registry_name(),
        rows in 1usize..5,
        cols in 1usize..20,
        bs in 1usize..9,
        seed in any::<u64>(),
    ) {
        let fmt = lookup(name).unwrap().as_block().with_block_size(bs);
        let mut s = seed;
        let m = Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 20.0
        });
        for axis in [0, 1] {
            let once = quantize_tensor(&m, &fmt, axis).unwrap().dequantize();
            let twice = quantize_tensor(&once, &fmt, axis).unwrap().dequantize();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn code_packing_round_trips(width in 1u32..9, codes in prop::collection::vec(any::<u8>(), 0..50)) {
        let masked: Vec<u32> = codes.iter().map(|&c| c as u32 & ((1 << width) - 1)).collect();
        let packed = pack_codes(masked.iter().copied(), width);
        prop_assert_eq!(packed.len(), (masked.len() * width as usize).div_ceil(8));
        prop_assert_eq!(unpack_codes(&packed, width, masked.len()).unwrap(), masked);
    }

    #[test]
    fn dense_container_round_trips(
        shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..4),
        f32_mask in any::<u8>(),
    ) {
        let mut c = TensorContainer::new();
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let dtype = if f32_mask >> (i % 8) & 1 == 1 { DType::F32 } else { DType::F64 };
            let data = (0..n).map(|k| (k as f64 + 0.1) * 1.37f64.powi(i as i32)).collect();
            c.insert(format!("t{i}"), DenseTensor::new(shape.clone(), dtype, data).unwrap());
        }
        let bytes = c.to_bytes().unwrap();
        let back = TensorContainer::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn b4int3_reference_block() {
    // Every four values share a 4-bit scale; 3-bit sign-magnitude elements.
    let fmt = lookup("b4int3").unwrap().as_block();
    let (qb, _) = fmt.quantize_block(&[0.0, 2.0, -7.0, 5.0]).unwrap();
    assert_eq!(fmt.scale.decode(qb.scale_code), 4.0);
    assert_eq!(fmt.dequantize_block(&qb), vec![0.0, 0.0, -8.0, 4.0]);
    assert_eq!(fmt.bits_per_value(), 4.0);
}
