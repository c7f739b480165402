mod common;

use std::collections::{BTreeMap, VecDeque};

use pathcache::delivery::{transfer_time, LinkRate};
use pathcache::harness::{Engine, EngineError};
use pathcache::sensordata::WireFormat;
use pathcache::{NodeId, Topology};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn bfs_distances(t: &Topology, from: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for l in t.links() {
            let [a, b] = l.endpoints;
            let next = if a == n {
                b
            } else if b == n {
                a
            } else {
                continue;
            };
            if !dist.contains_key(&next) {
                dist.insert(next, dist[&n] + 1);
                queue.push_back(next);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn routes_are_shortest_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_topology(&mut rng, 12);
        let ids: Vec<NodeId> = t.nodes().map(|n| n.id).collect();
        for &a in &ids {
            let dist = bfs_distances(&t, a);
            for &b in &ids {
                let p = t.route(a, b).unwrap();
                prop_assert_eq!(p.hops(), dist[&b]);
                prop_assert_eq!(p.source(), a);
                prop_assert_eq!(p.destination(), b);
                for w in p.nodes().windows(2) {
                    prop_assert!(t.link_between(w[0], w[1]).is_some());
                }
                let mut back = t.route(b, a).unwrap().nodes().to_vec();
                back.reverse();
                prop_assert_eq!(back.as_slice(), p.nodes());
            }
        }
    }

    #[test]
    fn engine_matches_sort_oracle(times in proptest::collection::vec(0u32..50, 0..200)) {
        let mut engine = Engine::new(0.0);
        for (i, t) in times.iter().enumerate() {
            engine.schedule(*t as f64 * 0.5, i).unwrap();
        }
        let mut dispatched = Vec::new();
        let mut clock = 0.0;
        engine.run::<EngineError, _>(|e, ev| {
            assert!(e.clock() >= clock);
            clock = e.clock();
            dispatched.push(ev.action);
            Ok(())
        }).unwrap();
        let mut oracle: Vec<usize> = (0..times.len()).collect();
        oracle.sort_by_key(|&i| (times[i], i));
        prop_assert_eq!(dispatched, oracle);
    }

    #[test]
    fn adding_a_link_never_shortens_a_transfer(
        bytes in 0u64..10_000_000,
        rates in proptest::collection::vec(1e6f64..1e10, 1..6),
        extra in 1e6f64..1e10,
        serve in 1e6f64..1e11,
    ) {
        let links: Vec<LinkRate> = rates.iter().map(|&rate| LinkRate { rate, latency: 0.0 }).collect();
        let base = transfer_time(bytes, &links, serve).unwrap();
        let mut longer = links.clone();
        longer.push(LinkRate { rate: extra, latency: 0.0 });
        let with_extra = transfer_time(bytes, &longer, serve).unwrap();
        prop_assert!(with_extra >= base);
        let bottleneck = rates.iter().copied().fold(serve, f64::min);
        if extra >= bottleneck {
            prop_assert_eq!(with_extra, base);
        }
    }

    #[test]
    fn caches_that_took_part_cover_the_query(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = random_generator(&mut rng, 12);
        let (store, readings) = store_for(&gen, WireFormat::default());
        let mut world = pathcache::World::new(ref60(), store, gen.grid(), Default::default());
        let clients = ref60().clients();
        let mut now = gen.duration_s;
        for _ in 0..6 {
            let client = clients[rand::Rng::gen_range(&mut rng, 0..clients.len())];
            let mode = random_mode(&mut rng);
            let q = random_query(&mut rng, &gen);
            let o = world.client_request(client, &q, mode, now).unwrap();
            now = o.completed_at() + 1.0;
            let wanted = oracle(&readings, &q);
            prop_assert_eq!(as_map(o.package.entries()), wanted.clone());
            // a cache sees only the residual left by the caches below it, so
            // each participating cache together with those below it covers
            // the query; caches above the topmost serving node carried nothing
            let top = o.sources.iter().map(|s| o.path.position(s.node).unwrap()).min();
            let Some(top) = top else { continue };
            let mut covered = BTreeMap::new();
            for n in o.chain.caches.iter().rev() {
                let pos = o.path.position(*n).unwrap();
                if pos < top {
                    break;
                }
                let c = world.caches().get(*n, pathcache::cache::SENSOR_CDN_BUNDLE).unwrap();
                covered.extend(as_map(c.entries()));
                prop_assert!(wanted.keys().all(|k| covered.contains_key(k)), "node {} and below miss entries", n);
            }
        }
    }
}
