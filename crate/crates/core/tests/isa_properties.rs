use mipu::isa::{assemble, disassemble, read_program, write_program, Message, MessageProgram, Opcode, PortId, SiteAddress};
use proptest::prelude::*;

fn opcode() -> impl Strategy<Value = Opcode> {
    (0u8..13).prop_map(|c| Opcode::from_code(c).unwrap())
}

fn port() -> impl Strategy<Value = PortId> {
    prop_oneof![
        (0u16..64).prop_map(|col| PortId::Top { col }),
        (0u16..256, 0u8..4, 0u8..4).prop_map(|(sitem, col, bus)| PortId::VBus { sitem, col, bus }),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    (opcode(), 0u16..4096, any::<u32>(), opcode(), 0u16..4096).prop_map(|(op, d, bits, nop, nd)| Message {
        opcode: op,
        dest: SiteAddress::new(d).unwrap(),
        value_bits: bits,
        next_opcode: nop,
        next_dest: SiteAddress::new(nd).unwrap(),
    })
}

fn program() -> impl Strategy<Value = MessageProgram> {
    prop::collection::vec((0u32..500, port(), message()), 0..40).prop_map(|items| {
        let mut p = MessageProgram::new();
        for (cycle, port, msg) in items {
            let _ = p.push(cycle, port, msg);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn assembler_fixpoint(p in program()) {
        let text = disassemble(&p);
        let once = assemble(&text).unwrap();
        prop_assert_eq!(&once, &p);
        prop_assert_eq!(disassemble(&once), text);
    }

    #[test]
    fn binary_round_trip(p in program()) {
        let mut bytes = Vec::new();
        write_program(&p, &mut bytes).unwrap();
        prop_assert_eq!(read_program(bytes.as_slice()).unwrap(), p);
    }

    #[test]
    fn value_bits_survive_text(bits in any::<u32>()) {
        let msg = Message { value_bits: bits, ..Message::new(Opcode::Update, SiteAddress::default(), 0.0, Opcode::Prog, SiteAddress::default()) };
        let mut p = MessageProgram::new();
        p.push(0, PortId::Top { col: 0 }, msg).unwrap();
        let back = assemble(&disassemble(&p)).unwrap();
        prop_assert_eq!(back.injections()[0].message.value_bits, bits);
    }
}
