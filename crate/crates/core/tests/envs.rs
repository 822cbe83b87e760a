use dimapg::envs::{
    CoopNav, CoopNavConfig, CoopNavState, Heading, MultiAgentEnv, PredatorPrey, PredatorPreyConfig, Survival,
    SurvivalConfig, ATTACK_OFFSETS, MOVE_OFFSETS, NUM_SURVIVAL_ACTIONS,
};
use dimapg::policy::Action;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(rng: &mut ChaCha8Rng, b: f64) -> [f64; 2] {
    [rng.random_range(-b..b), rng.random_range(-b..b)]
}

fn random_coopnav_state(rng: &mut ChaCha8Rng, n: usize) -> CoopNavState {
    // Half the cases pack agents tightly so collisions actually occur.
    let spread = if rng.random_bool(0.5) { 0.15 } else { 1.2 };
    CoopNavState {
        positions: (0..n).map(|_| random_point(rng, spread)).collect(),
        velocities: (0..n).map(|_| random_point(rng, 1.0)).collect(),
        goals: (0..n).map(|_| random_point(rng, 1.0)).collect(),
    }
}

fn random_force(rng: &mut ChaCha8Rng, scale: f64) -> Action {
    Action::Continuous(vec![rng.random_range(-scale..scale), rng.random_range(-scale..scale)])
}

/// Agent observation split into (own block, relative positions of the others).
fn split_obs(obs: &[f64], n: usize) -> (&[f64], Vec<[u64; 2]>) {
    let own = 4 + 2 * n;
    let others = obs[own..].chunks(2).map(|c| [c[0].to_bits(), c[1].to_bits()]).collect();
    (&obs[..own], others)
}

#[test]
fn coopnav_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut collided = 0;
    for case in 0..100 {
        let n = 3 + case % 3;
        let env_config = CoopNavConfig {
            num_agents: n,
            ..Default::default()
        };
        let state = random_coopnav_state(&mut rng, n);
        let actions: Vec<Action> = (0..n).map(|_| random_force(&mut rng, 2.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);

        let mut original = CoopNav::new(env_config.clone());
        original.set_state(state.clone()).unwrap();
        let out = original.step(&actions).unwrap();

        let mut permuted = CoopNav::new(env_config);
        permuted.set_state(state.permuted(&perm)).unwrap();
        let permuted_actions: Vec<Action> = perm.iter().map(|&i| actions[i].clone()).collect();
        let out_p = permuted.step(&permuted_actions).unwrap();

        assert_eq!(out.info.collisions, out_p.info.collisions);
        collided += usize::from(out.info.collisions > 0);
        assert_eq!(permuted.state(), &original.state().permuted(&perm));
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(out_p.rewards[i].to_bits(), out.rewards[src].to_bits());
            let (own_p, mut others_p) = split_obs(&out_p.observations[i], n);
            let (own, mut others) = split_obs(&out.observations[src], n);
            assert_eq!(own_p, own);
            others_p.sort_unstable();
            others.sort_unstable();
            assert_eq!(others_p, others);
        }
    }
    assert!(collided > 0, "no case exercised the collision penalty");
}

#[test]
fn particle_rewards_stay_clipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut envs: Vec<Box<dyn MultiAgentEnv>> = vec![
        Box::new(CoopNav::new(CoopNavConfig::default())),
        Box::new(CoopNav::new(CoopNavConfig {
            num_agents: 6,
            collision_penalty: 3.0,
            ..Default::default()
        })),
        Box::new(PredatorPrey::new(PredatorPreyConfig::default())),
        Box::new(PredatorPrey::new(PredatorPreyConfig {
            team_reward: true,
            num_predators: 12,
            ..Default::default()
        })),
    ];
    for env in envs.iter_mut() {
        let mut extremes = (0.0f64, 0.0f64);
        for episode in 0..10 {
            env.reset(&mut rng);
            for _ in 0..100 {
                let scale = if episode % 2 == 0 { 1.0 } else { 50.0 };
                let actions: Vec<Action> = (0..env.num_agents()).map(|_| random_force(&mut rng, scale)).collect();
                let out = env.step(&actions).unwrap();
                for r in out.rewards {
                    assert!((-1.0..=1.0).contains(&r), "{}: reward {r}", env.name());
                    extremes = (extremes.0.min(r), extremes.1.max(r));
                }
            }
        }
        assert!(extremes.0 < 0.0 || extremes.1 > 0.0, "{} produced only zero rewards", env.name());
    }
}

#[test]
fn crowded_coopnav_saturates_at_minus_one() {
    let mut env = CoopNav::new(CoopNavConfig::default());
    env.set_state(CoopNavState {
        positions: vec![[0.99, 0.99]; 3],
        velocities: vec![[1.0, 1.0]; 3],
        goals: vec![[-1.0, -1.0]; 3],
    })
    .unwrap();
    let out = env.step(&vec![Action::Continuous(vec![10.0, 10.0]); 3]).unwrap();
    assert_eq!(out.rewards, vec![-1.0; 3]);
}

#[test]
fn survival_conserves_food_and_keeps_cells_single_occupied() {
    let config = SurvivalConfig {
        food: 40,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut env = Survival::new(config.clone());
    env.reset(&mut rng);
    let initial = env.food_remaining();
    assert_eq!(initial, 40);
    let mut eaten = 0;
    let mut deaths = 0;
    for step in 0..1000 {
        let actions: Vec<Action> = (0..config.num_agents)
            .map(|_| Action::Discrete(rng.random_range(0..NUM_SURVIVAL_ACTIONS)))
            .collect();
        let out = env.step(&actions).unwrap();
        eaten += out.info.food_eaten;
        deaths += out.info.deaths;

        assert_eq!(env.food_remaining() + env.food_consumed(), initial, "step {step}");
        assert_eq!(env.food_consumed(), eaten);
        let mut food_cells = 0;
        let mut occupied = 0;
        for y in 0..config.height {
            for x in 0..config.width {
                food_cells += usize::from(env.has_food(x, y));
                if let Some(a) = env.occupant(x, y) {
                    occupied += 1;
                    let agent = &env.agents()[a];
                    assert!(agent.alive && (agent.x, agent.y) == (x, y));
                    assert!(!env.has_food(x, y), "agent standing on uneaten food");
                }
            }
        }
        assert_eq!(food_cells, env.food_remaining());
        let alive: Vec<_> = env.agents().iter().filter(|a| a.alive).collect();
        assert_eq!(occupied, alive.len());
        assert_eq!(alive.len() + deaths, config.num_agents);
        for a in &alive {
            assert_eq!(env.occupant(a.x, a.y).map(|i| &env.agents()[i]), Some(*a));
        }
        assert_eq!(out.active, env.agents().iter().map(|a| a.alive).collect::<Vec<_>>());
    }
    assert!(eaten > 0, "random play should reach some food in 1000 steps");
}

/// Clockwise quarter turns of an (x, y) vector.
fn rotate_cw(mut v: (i64, i64), quarter_turns: usize) -> (i64, i64) {
    for _ in 0..quarter_turns {
        v = (v.1, -v.0);
    }
    v
}

const HEADINGS: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

#[test]
fn egocentric_offsets_follow_a_rotation_matrix() {
    for (turns, h) in HEADINGS.iter().enumerate() {
        for &offset in MOVE_OFFSETS.iter().chain(&ATTACK_OFFSETS) {
            assert_eq!(h.to_world(offset), rotate_cw(offset, turns), "{h:?} {offset:?}");
        }
        assert_eq!(h.turned_right(), HEADINGS[(turns + 1) % 4]);
        assert_eq!(h.turned_left(), HEADINGS[(turns + 3) % 4]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_preserves_l1_length_and_inverts(r in -5i64..=5, f in -5i64..=5, h in 0usize..4) {
        let heading = HEADINGS[h];
        let w = heading.to_world((r, f));
        prop_assert_eq!(w.0.abs() + w.1.abs(), r.abs() + f.abs());
        prop_assert_eq!(rotate_cw(w, (4 - h) % 4), (r, f));
    }

    #[test]
    fn coopnav_step_is_pure(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_coopnav_state(&mut rng, n);
        let actions: Vec<Action> = (0..n).map(|_| random_force(&mut rng, 3.0)).collect();
        let config = CoopNavConfig { num_agents: n, ..Default::default() };
        let mut a = CoopNav::new(config.clone());
        let mut b = CoopNav::new(config);
        a.set_state(state.clone()).unwrap();
        b.set_state(state).unwrap();
        prop_assert_eq!(a.step(&actions).unwrap(), b.step(&actions).unwrap());
        prop_assert_eq!(a.state(), b.state());
    }
}
