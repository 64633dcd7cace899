use alembic::protocol::{
    decode_frame, decode_row_batch, decode_values, encode_frame, encode_row_batch, encode_values,
    Command, FrameReader, Opcode, RowBatch, Value,
};
use alembic::MatrixHandle;
use proptest::prelude::*;

fn any_f64_bits() -> impl Strategy<Value = f64> {
    any::<u64>().prop_map(f64::from_bits)
}

fn any_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        any::<i32>().prop_map(Value::I32),
        any::<i64>().prop_map(Value::I64),
        any_f64_bits().prop_map(Value::F64),
        ".{0,40}".prop_map(Value::Str),
        (any::<u32>(), any::<u64>(), any::<u64>())
            .prop_map(|(i, r, c)| Value::Matrix(MatrixHandle::new(i, r, c))),
    ]
}

fn any_command() -> impl Strategy<Value = Command> {
    let ops = [
        Opcode::Handshake,
        Opcode::RequestWorkers,
        Opcode::RegisterLibrary,
        Opcode::CreateMatrix,
        Opcode::SendRows,
        Opcode::FetchRows,
        Opcode::Run,
        Opcode::Close,
        Opcode::Collective,
    ];
    prop_oneof![
        proptest::sample::select(ops.to_vec()).prop_map(Command::Request),
        proptest::sample::select(ops.to_vec()).prop_map(Command::Response),
        Just(Command::Error),
    ]
}

fn any_batch() -> impl Strategy<Value = RowBatch> {
    (any::<u32>(), any::<u64>(), 0u32..6, 1u64..6).prop_flat_map(|(id, start, rows, cols)| {
        proptest::collection::vec(any_f64_bits(), (rows as u64 * cols) as usize).prop_map(
            move |data| RowBatch {
                matrix_id: id,
                start_row: start,
                num_rows: rows,
                num_cols: cols,
                data,
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn values_round_trip(vals in proptest::collection::vec(any_value(), 0..8)) {
        let bytes = encode_values(&vals);
        prop_assert_eq!(decode_values(&bytes).unwrap(), vals);
    }

    #[test]
    fn frames_round_trip_whole_and_bytewise(
        cmd in any_command(),
        sid in any::<u32>(),
        payload in proptest::collection::vec(any::<u8>(), 0..200),
    ) {
        let wire = encode_frame(cmd, sid, &payload).unwrap();
        let (f, used) = decode_frame(&wire).unwrap();
        prop_assert_eq!(used, wire.len());
        prop_assert_eq!(f.command, cmd);
        prop_assert_eq!(f.session_id, sid);
        prop_assert_eq!(&f.payload, &payload);

        let mut r = FrameReader::new();
        let mut got = Vec::new();
        for b in &wire {
            r.push(std::slice::from_ref(b));
            if let Some(f) = r.next_frame().unwrap() {
                got.push(f);
            }
        }
        prop_assert_eq!(got.len(), 1);
        prop_assert_eq!(&got[0].payload, &payload);
        prop_assert_eq!(r.buffered(), 0);
    }

    #[test]
    fn row_batches_round_trip(b in any_batch()) {
        let bytes = encode_row_batch(&b).unwrap();
        prop_assert_eq!(bytes.len(), 24 + b.data.len() * 8);
        prop_assert_eq!(decode_row_batch(&bytes).unwrap(), b);
    }

    #[test]
    fn truncated_batches_are_rejected(b in any_batch(), cut in 1usize..16) {
        let bytes = encode_row_batch(&b).unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(decode_row_batch(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_values(&bytes);
        let _ = decode_frame(&bytes);
        let _ = decode_row_batch(&bytes);
    }
}
