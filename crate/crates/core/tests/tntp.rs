use netequil::synthetic::random_assignment;
use netequil::tntp::{parse_tntp, write_network, write_trips, TntpOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn network_and_trips_round_trip(seed in 0u64..100_000) {
        let inst = random_assignment(seed, 20);
        let net_text = write_network(&inst.network).unwrap();
        let trips_text = write_trips(&inst.demand[0]);
        let (net, od) = parse_tntp(&net_text, &trips_text, TntpOptions::default()).unwrap();
        prop_assert_eq!(net.num_nodes(), inst.network.num_nodes());
        prop_assert_eq!(net.num_zones(), inst.network.num_zones());
        for (a, b) in net.links().iter().zip(inst.network.links()) {
            prop_assert_eq!((a.tail, a.head), (b.tail, b.head));
            prop_assert_eq!(a.free_flow_time, b.free_flow_time);
            prop_assert_eq!(a.capacity, b.capacity);
        }
        prop_assert_eq!(od, inst.demand[0].clone());
    }
}

#[test]
fn header_counts_are_checked() {
    let text = "<NUMBER OF ZONES> 1\n<NUMBER OF NODES> 2\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n\
                \t1\t2\t10\t1\t1\t0.15\t4\t0\t0\t1\t;\n";
    let err = netequil::tntp::parse_network(text, TntpOptions::default()).unwrap_err();
    assert!(matches!(err, netequil::Error::Parse { .. }), "{err:?}");
}
