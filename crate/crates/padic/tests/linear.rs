use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use padic::arith::{prat, PRat};
use padic::linear::*;
use padic::seq::UPSeq;
use padic::systems::{digit_expansion_exact, prat_mod_pk};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lin(p: u64, pairs: &[(i64, i64)]) -> LinSystem {
    LinSystem::from_int_pairs(p, pairs).unwrap()
}

fn collatz() -> LinSystem {
    lin(2, &[(0, 1), (1, 3)])
}

fn binary() -> LinSystem {
    lin(2, &[(0, 1), (-1, 1)])
}

fn up(lambda: &[u64], rho: &[u64]) -> UPSeq {
    UPSeq {
        lambda: lambda.to_vec(),
        rho: rho.to_vec(),
    }
}

fn int(x: i64) -> BigInt {
    BigInt::from(x)
}

/// Random rational in Z_p with small numerator and denominator.
fn rand_zp_rat(rng: &mut ChaCha8Rng, p: u64) -> PRat {
    loop {
        let den = rng.gen_range(1i64..12);
        if den as u64 % p == 0 {
            continue;
        }
        let num = rng.gen_range(-30i64..31);
        return prat(num, den);
    }
}

/// Random slope with unit low digit.
fn rand_unit(rng: &mut ChaCha8Rng, p: u64) -> PRat {
    loop {
        let b = rand_zp_rat(rng, p);
        let d = prat_mod_pk(&b, p, 1).unwrap().to_u64().unwrap();
        if d != 0 && num_integer::gcd(d, p) == 1 {
            return b;
        }
    }
}

fn rand_system(rng: &mut ChaCha8Rng, p: u64) -> LinSystem {
    let pairs = (0..p)
        .map(|_| (rand_zp_rat(rng, p), rand_unit(rng, p)))
        .collect();
    LinSystem::new(p, pairs).unwrap()
}

/// Random weak-canonical system: a_r = −r·b_r + p·t keeps every branch value
/// divisible by p on its own class.
fn rand_wcanf(rng: &mut ChaCha8Rng, p: u64) -> LinSystem {
    let pairs = (0..p)
        .map(|r| {
            let b = rand_unit(rng, p);
            let t = rand_zp_rat(rng, p);
            let a = -&b * PRat::from_integer(int(r as i64))
                + t * PRat::from_integer(int(p as i64));
            (a, b)
        })
        .collect();
    let f = LinSystem::new(p, pairs).unwrap();
    assert!(f.is_weak_canonical());
    f
}

fn rand_word(rng: &mut ChaCha8Rng, p: u64, lo: usize, hi: usize) -> Vec<u64> {
    let len = rng.gen_range(lo..=hi);
    (0..len).map(|_| rng.gen_range(0..p)).collect()
}

// ---------------------------------------------------------------------------
// construction

#[test]
fn construction_validates_coefficients() {
    assert!(matches!(
        LinSystem::from_int_pairs(2, &[(0, 1), (1, 2)]),
        Err(LinError::BlockViolation(1))
    ));
    assert!(matches!(
        LinSystem::new(2, vec![(prat(1, 2), prat(1, 1)), (prat(1, 1), prat(3, 1))]),
        Err(LinError::NonIntegralCoefficients(0))
    ));
    assert!(matches!(
        LinSystem::from_int_pairs(2, &[(0, 1)]),
        Err(LinError::BadInput(_))
    ));
    // slope 0 has low digit 0
    assert!(matches!(
        LinSystem::from_int_pairs(3, &[(0, 1), (0, 0), (0, 1)]),
        Err(LinError::BlockViolation(1))
    ));
}

#[test]
fn weak_canonical_companion_preserves_the_map() {
    let f = lin(2, &[(0, 1), (2, 3)]); // a_1 + b_1 = 5 is odd
    assert!(!f.is_weak_canonical());
    let g = f.weak_canonical();
    assert!(g.is_weak_canonical());
    assert_eq!(g.pairs()[1], (prat(1, 1), prat(3, 1)));
    for n in [-9i64, -2, 0, 1, 7, 27] {
        let x = prat(n, 1);
        assert_eq!(f.apply(&x).unwrap(), g.apply(&x).unwrap());
        assert_eq!(
            f.digit_prefix(&x, 12).unwrap(),
            g.digit_prefix(&x, 12).unwrap()
        );
    }
}

#[test]
fn digit_prefix_matches_fibred_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0001);
    for _ in 0..50 {
        let p = *[2u64, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
        let f = rand_system(&mut rng, p);
        let n = rand_zp_rat(&mut rng, p);
        let want = digit_expansion_exact(&f.to_fibred(), &n, 10).unwrap();
        assert_eq!(f.digit_prefix(&n, 10).unwrap(), want);
    }
    // and back through from_fibred
    let f = collatz();
    let round = LinSystem::from_fibred(&f.to_fibred()).unwrap();
    assert_eq!(round.pairs(), f.pairs());
}

// ---------------------------------------------------------------------------
// word coefficients

#[test]
fn alpha_beta_examples() {
    let fc = collatz();
    assert_eq!(
        alpha_beta(&fc, &[1, 0]).unwrap(),
        (prat(1, 1), prat(3, 1))
    );
    assert_eq!(alpha_beta(&fc, &[]).unwrap(), (prat(0, 1), prat(1, 1)));
    assert_eq!(
        alpha_beta(&fc, &[1, 1]).unwrap(),
        (prat(5, 1), prat(9, 1))
    );
    // (α + nβ)/p^2 at n=3 follows the orbit 3 → 5 → 8
    assert_eq!(word_value(&fc, &[1, 1], &prat(3, 1)).unwrap(), prat(8, 1));
    assert!(matches!(
        alpha_beta(&fc, &[2]),
        Err(LinError::BadInput(_))
    ));
}

#[test]
fn word_value_examples() {
    let fc = collatz();
    assert_eq!(
        word_value(&fc, &[1, 0, 1, 0, 0, 1], &prat(17, 1)).unwrap(),
        prat(8, 1)
    );
    assert_eq!(word_value(&fc, &[], &prat(-5, 3)).unwrap(), prat(-5, 3));
    assert_eq!(
        word_value(&binary(), &[1, 0, 1], &prat(5, 1)).unwrap(),
        prat(0, 1)
    );
}

#[test]
fn word_value_equals_word_apply() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0002);
    for _ in 0..500 {
        let p = *[2u64, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
        let f = rand_system(&mut rng, p);
        let d = rand_word(&mut rng, p, 0, 8);
        let n = rand_zp_rat(&mut rng, p);
        assert_eq!(
            word_value(&f, &d, &n).unwrap(),
            word_apply(&f, &d, &n).unwrap()
        );
    }
}

// ---------------------------------------------------------------------------
// periodic points and prefix residues

#[test]
fn periodic_point_examples() {
    let fc = collatz();
    assert_eq!(periodic_point(&fc, &[], &[1, 0]).unwrap(), prat(1, 1));
    assert_eq!(periodic_point(&fc, &[], &[0]).unwrap(), prat(0, 1));
    assert_eq!(
        periodic_point(&binary(), &[1, 0], &[0, 1]).unwrap(),
        prat(-5, 3)
    );
    assert!(matches!(
        periodic_point(&fc, &[1], &[]),
        Err(LinError::DegeneratePeriod)
    ));
    let skew = lin(2, &[(0, 1), (2, 3)]);
    assert!(matches!(
        periodic_point(&skew, &[], &[1, 0]),
        Err(LinError::BadInput(_))
    ));
}

#[test]
fn periodic_point_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0003);
    for _ in 0..500 {
        let p = *[2u64, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
        let f = rand_wcanf(&mut rng, p);
        let d_i = rand_word(&mut rng, p, 0, 3);
        let d_p = rand_word(&mut rng, p, 1, 4);
        let n = periodic_point(&f, &d_i, &d_p).unwrap();
        let want: Vec<u64> = d_i
            .iter()
            .chain(d_p.iter().cycle().take(3 * d_p.len()))
            .copied()
            .collect();
        assert_eq!(f.digit_prefix(&n, want.len()).unwrap(), want);
    }
}

#[test]
fn prefix_residue_examples() {
    let fc = collatz();
    assert_eq!(
        prefix_residue(&fc, &[1, 1, 1, 0]).unwrap(),
        BigUint::from(7u32)
    );
    assert_eq!(
        prefix_residue(&fc, &[0, 0, 0, 1]).unwrap(),
        BigUint::from(8u32)
    );
    assert_eq!(prefix_residue(&binary(), &[0]).unwrap(), BigUint::zero());
    assert_eq!(prefix_residue(&fc, &[0]).unwrap(), BigUint::zero());
}

#[test]
fn prefix_residue_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0004);
    for _ in 0..200 {
        let p = *[2u64, 3].iter().nth(rng.gen_range(0..2)).unwrap();
        let f = rand_wcanf(&mut rng, p);
        let d = rand_word(&mut rng, p, 1, 7);
        let n = prefix_residue(&f, &d).unwrap();
        assert!(n < padic::arith::pow_u(p, d.len() as u32));
        let x = PRat::from_integer(BigInt::from(n));
        assert_eq!(f.digit_prefix(&x, d.len()).unwrap(), d);
    }
}

// ---------------------------------------------------------------------------
// inversion

#[test]
fn invert_for_system_examples() {
    // recover the Collatz constant
    let f = lin(2, &[(0, 1), (7, 3)]); // stored a_1 is a placeholder
    let a1 = invert_for_system(&f, 1, &prat(1, 1), &up(&[], &[1, 0])).unwrap();
    assert_eq!(a1, prat(1, 1));

    // recover the binary shift constant
    let g = lin(2, &[(0, 1), (1, 1)]);
    let a1 = invert_for_system(&g, 1, &prat(1, 1), &up(&[1], &[0])).unwrap();
    assert_eq!(a1, prat(-1, 1));

    // one-step fixed point algebra: n = (a_r + b_r n)/p
    let a1 = invert_for_system(&f, 1, &prat(-1, 1), &up(&[], &[1])).unwrap();
    assert_eq!(a1, prat(1, 1));
    let h = lin(3, &[(0, 1), (-1, 1), (5, 2)]);
    let a2 = invert_for_system(&h, 2, &prat(-1, 1), &up(&[], &[2])).unwrap();
    assert_eq!(a2, prat(-1, 1)); // −1 = (a_2 + 2·(−1))/3

    // preconditions
    assert!(matches!(
        invert_for_system(&f, 1, &prat(2, 1), &up(&[], &[1, 0])),
        Err(LinError::BadInput(_))
    ));
    assert!(matches!(
        invert_for_system(&f, 1, &prat(1, 1), &up(&[], &[0, 1])),
        Err(LinError::BadInput(_))
    ));
}

#[test]
fn invert_for_pairs_collatz_word() {
    let f = collatz();
    let fam = invert_for_pairs(&f, 1, &up(&[], &[1, 0])).unwrap();
    assert_eq!(fam.k, Some(1));
    for v in [&fam.a1, &fam.b1, &fam.c1, &fam.a2, &fam.b2, &fam.c2] {
        assert_eq!(*v, PRat::one());
    }
    // members are (2m+1, 2m+1); a_1 = 3 with n = 3 really is (x, 3x+3)
    assert_eq!(fam.member_first(&int(0)), (prat(1, 1), prat(1, 1)));
    assert_eq!(fam.member_first(&int(1)), (prat(3, 1), prat(3, 1)));
    let sys = lin(2, &[(0, 1), (3, 3)]);
    assert_eq!(sys.digit_prefix(&prat(3, 1), 6).unwrap(), vec![1, 0, 1, 0, 1, 0]);

    let fam_int = fam.integer_family().unwrap();
    assert_eq!(
        (fam_int.l1.clone(), fam_int.r1.clone(), fam_int.s1.clone()),
        (int(1), int(1), int(0))
    );
    assert_eq!(fam_int.base1, (int(1), int(1)));
    assert_eq!(fam_int.step1, (int(2), int(2)));
    for m in -3..=3 {
        assert_eq!(
            fam_int.member_first(&int(m)),
            (int(2 * m + 1), int(2 * m + 1))
        );
    }
    // both presentations generate the same progression
    assert_eq!(fam_int.step2.0.abs(), fam_int.step1.0.abs());
    assert_eq!(fam_int.step2.1.abs(), fam_int.step1.1.abs());

    // m = 0 reproduces the single-solution form
    let a1 = invert_for_system(&f, 1, &fam.b1, &up(&[], &[1, 0])).unwrap();
    assert_eq!(a1, fam.a1);
}

#[test]
fn invert_for_pairs_zero_branch_word() {
    // unknown a_0 with a_1 = 1 pinned: D = (0,1)^∞ gives the U_0 family
    let f = collatz();
    let fam = invert_for_pairs(&f, 0, &up(&[], &[0, 1])).unwrap();
    assert_eq!(fam.k, Some(1));
    assert_eq!(fam.a1, prat(0, 1));
    assert_eq!(fam.b1, prat(2, 1));
    assert_eq!(fam.c1, prat(3, 1));
    assert_eq!(fam.a2, prat(-2, 3));
    assert_eq!(fam.b2, prat(0, 1));
    assert_eq!(fam.c2, prat(1, 3));
    for m in -3i64..=3 {
        assert_eq!(
            fam.member_first(&int(m)),
            (prat(2 * m, 1), prat(6 * m + 2, 1))
        );
    }
    let fam_int = fam.integer_family().unwrap();
    assert_eq!(fam_int.base1, (int(0), int(2)));
    assert_eq!(fam_int.step1, (int(2), int(6)));
    // second presentation walks the same set
    let diff = (
        &fam_int.base2.0 - &fam_int.base1.0,
        &fam_int.base2.1 - &fam_int.base1.1,
    );
    let q0 = &diff.0 / &fam_int.step2.0;
    assert_eq!(&q0 * &fam_int.step2.0, diff.0);
    assert_eq!(&q0 * &fam_int.step2.1, diff.1);

    // matches the closed Collatz family ((V/g, U_0/g)(2m+1) − 1)
    let closed = collatz_constant_family(&[0, 1], 0).unwrap();
    assert_eq!(closed.u0, int(3));
    assert_eq!(closed.u1, int(2));
    assert_eq!(closed.v, int(1));
    for m in -3i64..=3 {
        let (a, n) = closed.member(&int(m));
        assert_eq!((a.clone(), n.clone()), (int(2 * m), int(6 * m + 2)));
        let sys = LinSystem::new(
            2,
            vec![
                (PRat::from_integer(a), prat(1, 1)),
                (prat(1, 1), prat(3, 1)),
            ],
        )
        .unwrap();
        assert_eq!(
            sys.digit_prefix(&PRat::from_integer(n), 8).unwrap(),
            vec![0, 1, 0, 1, 0, 1, 0, 1]
        );
    }
}

#[test]
fn collatz_family_handles_negative_v() {
    // P = (1,1,0): V = 8 − 9 = −1, so members alternate signs through m
    let fam = collatz_constant_family(&[1, 1, 0], 1).unwrap();
    assert_eq!((fam.u1.clone(), fam.v.clone()), (int(5), int(-1)));
    assert_eq!(fam.member(&int(0)), (int(-1), int(5)));
    assert_eq!(fam.member(&int(-1)), (int(1), int(-5)));
    // (a_1, n) = (−1, 5): the 3x−1 cycle 5 → 7 → 10 has digits (1,1,0)
    let sys = lin(2, &[(0, 1), (-1, 3)]);
    assert_eq!(
        sys.digit_prefix(&prat(5, 1), 9).unwrap(),
        vec![1, 1, 0, 1, 1, 0, 1, 1, 0]
    );
    // (a_1, n) = (1, −5): the negative 3x+1 cycle −5 → −7 → −10
    assert_eq!(
        collatz().digit_prefix(&prat(-5, 1), 9).unwrap(),
        vec![1, 1, 0, 1, 1, 0, 1, 1, 0]
    );
    assert!(collatz_constant_family(&[0, 0], 1).is_err());
    assert!(collatz_constant_family(&[1], 0).is_err());
}

#[test]
fn invert_for_pairs_without_integer_members() {
    // a_0 = 2/5 drags a denominator into B_1 that C_1 cannot absorb
    let f = LinSystem::new(2, vec![(prat(2, 5), prat(1, 1)), (prat(1, 1), prat(3, 1))]).unwrap();
    let fam = invert_for_pairs(&f, 1, &up(&[], &[1, 0])).unwrap();
    assert_eq!(fam.b1, prat(9, 5));
    assert_eq!(fam.c1, prat(1, 1));
    assert!(matches!(
        fam.integer_family(),
        Err(LinError::NoIntegerSolutions)
    ));
    // the Z_p family is still real: (1, 9/5) has word (1,0)^∞
    let (a, n) = fam.member_first(&int(0));
    assert_eq!((a, n.clone()), (prat(1, 1), prat(9, 5)));
    assert_eq!(f.digit_prefix(&n, 6).unwrap(), vec![1, 0, 1, 0, 1, 0]);
}

#[test]
fn invert_members_verify_against_digits() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0005);
    for _ in 0..60 {
        let p = *[2u64, 3].iter().nth(rng.gen_range(0..2)).unwrap();
        let f = rand_wcanf(&mut rng, p);
        let r = rng.gen_range(0..p);
        let mut rho = rand_word(&mut rng, p, 1, 3);
        rho[0] = r; // keep the unknown branch in play
        let lambda = rand_word(&mut rng, p, 0, 2);
        let d = up(&lambda, &rho);
        // invert_for_pairs digit-checks members m ∈ [−3, 3] internally
        let fam = invert_for_pairs(&f, r, &d).unwrap();
        // second presentation members satisfy the same word
        let depth = lambda.len() + 3 * rho.len();
        for m in -2i64..=2 {
            let (a, n) = fam.member_second(&int(m));
            let mut pairs = f.weak_canonical().pairs().to_vec();
            pairs[r as usize].0 = a;
            let sys = LinSystem::new(p, pairs).unwrap();
            assert_eq!(sys.digit_prefix(&n, depth).unwrap(), d.prefix(depth));
        }
        // and m = 0 agrees with the single-coefficient inversion when the
        // word starts with r
        if d.digit(0) == Some(r) {
            let a = invert_for_system(&f, r, &fam.b1, &d).unwrap();
            assert_eq!(a, fam.a1);
        }
    }
}

// ---------------------------------------------------------------------------
// transfer maps (p = 2)

fn golden_four() -> (LinSystem, LinSystem, LinSystem, LinSystem) {
    (
        lin(2, &[(4, 5), (19, -7)]),
        lin(2, &[(0, 5), (1, -7)]),
        lin(2, &[(0, -7), (1, 5)]),
        lin(2, &[(-12, -7), (3, 5)]),
    )
}

#[test]
fn transfer_formulas_match_golden_data() {
    let (f1, f2, f3, f4) = golden_four();
    for n in [prat(0, 1), prat(1, 1), prat(-5, 1), prat(7, 3)] {
        assert_eq!(
            shared_slope_transfer(&f1, &f2, &n).unwrap(),
            (prat(4, 1) + prat(3, 1) * &n) / prat(93, 1)
        );
        assert_eq!(
            swapped_slope_transfer(&f2, &f3, &n).unwrap(),
            (prat(-1, 1) + prat(9, 1) * &n) / prat(3, 1)
        );
        assert_eq!(
            shared_slope_transfer(&f3, &f4, &n).unwrap(),
            (prat(-12, 1) - prat(9, 1) * &n) / prat(9, 1)
        );
        // the composite collapses to (−35 − 3n)/31
        let y = shared_slope_transfer(&f1, &f2, &n).unwrap();
        let y = swapped_slope_transfer(&f2, &f3, &y).unwrap();
        let y = shared_slope_transfer(&f3, &f4, &y).unwrap();
        assert_eq!(y, (prat(-35, 1) - prat(3, 1) * &n) / prat(31, 1));
    }

    // the worked point: m ↦ n with complementary digit words
    let m = prat(156065447, 59288775);
    let y = shared_slope_transfer(&f1, &f2, &m).unwrap();
    let y = swapped_slope_transfer(&f2, &f3, &y).unwrap();
    let n = shared_slope_transfer(&f3, &f4, &y).unwrap();
    assert_eq!(n, prat(-847767822, 612650675));

    let head: Vec<u64> = [1, 0, 1, 0]
        .into_iter()
        .chain([1, 1, 0, 1, 0, 0, 0, 1].into_iter().cycle().take(24))
        .collect();
    assert_eq!(f1.digit_prefix(&m, head.len()).unwrap(), head);
    let flipped: Vec<u64> = head.iter().map(|d| 1 - d).collect();
    assert_eq!(f4.digit_prefix(&n, flipped.len()).unwrap(), flipped);

    // shape guards
    assert!(shared_slope_transfer(&f1, &f3, &prat(0, 1)).is_err());
    assert!(swapped_slope_transfer(&f1, &f2, &prat(0, 1)).is_err());
}

#[test]
fn shared_slope_transfer_preserves_digit_words() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0006);
    for _ in 0..200 {
        let b0 = rand_unit(&mut rng, 2);
        let b1 = rand_unit(&mut rng, 2);
        let make = |rng: &mut ChaCha8Rng| {
            let t0 = rand_zp_rat(rng, 2);
            let t1 = rand_zp_rat(rng, 2);
            LinSystem::new(
                2,
                vec![
                    (t0 * prat(2, 1), b0.clone()),
                    (-&b1 + t1 * prat(2, 1), b1.clone()),
                ],
            )
            .unwrap()
        };
        let f = make(&mut rng);
        let g = make(&mut rng);
        let d_i = rand_word(&mut rng, 2, 0, 3);
        let d_p = rand_word(&mut rng, 2, 1, 5);
        let x = periodic_point(&f, &d_i, &d_p).unwrap();
        let y = periodic_point(&g, &d_i, &d_p).unwrap();
        assert_eq!(shared_slope_transfer(&f, &g, &x).unwrap(), y);
    }
}

#[test]
fn swapped_slope_transfer_flips_digit_words() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0007);
    for _ in 0..200 {
        let b0 = rand_unit(&mut rng, 2);
        let b1 = rand_unit(&mut rng, 2);
        let f = LinSystem::new(2, vec![(prat(0, 1), b0.clone()), (prat(1, 1), b1.clone())])
            .unwrap();
        let g = LinSystem::new(2, vec![(prat(0, 1), b1.clone()), (prat(1, 1), b0.clone())])
            .unwrap();
        let d_i = rand_word(&mut rng, 2, 0, 3);
        let d_p = rand_word(&mut rng, 2, 1, 5);
        let flip = |w: &[u64]| w.iter().map(|d| 1 - d).collect::<Vec<_>>();
        let x = periodic_point(&f, &d_i, &d_p).unwrap();
        let y = periodic_point(&g, &flip(&d_i), &flip(&d_p)).unwrap();
        assert_eq!(swapped_slope_transfer(&f, &g, &x).unwrap(), y);
    }
}

// ---------------------------------------------------------------------------
// classification

#[test]
fn classify_examples() {
    let c = classify(&collatz());
    assert_eq!(c.growth, Growth::Mixed);
    assert_eq!(c.den_growth, DenGrowth::DContractive);
    assert_eq!(c.radius, None);

    let c = classify(&binary());
    assert_eq!(c.growth, Growth::Contractive);
    assert_eq!(c.den_growth, DenGrowth::DContractive);
    assert_eq!(c.radius, Some(prat(2, 1)));

    let c = classify(&lin(2, &[(0, 3), (1, 3)]));
    assert_eq!(c.growth, Growth::Expansive);
    assert_eq!(c.radius, Some(prat(2, 1)));

    let c = classify(
        &LinSystem::new(2, vec![(prat(2, 1), prat(3, 11)), (prat(1, 1), prat(-11, 1))]).unwrap(),
    );
    assert_eq!(c.growth, Growth::Mixed);
    assert_eq!(c.den_growth, DenGrowth::DMixed);
}

// ---------------------------------------------------------------------------
// rational orbits

#[test]
fn orbit_collatz_27() {
    let f = collatz();
    let rec = rational_orbit(&f, &prat(27, 1), 10_000, 100).unwrap();
    assert_eq!(rec.status, OrbitStatus::UltimatelyPeriodic);
    assert_eq!(rec.initial_length, 70);
    assert_eq!(rec.period_length, 2);
    assert_eq!(rec.period_digits, vec![1, 0]);
    assert_eq!(rec.max_denominator, BigUint::one());

    // re-iteration: x_{|λ|+|ρ|} = x_{|λ|}
    let vals = f.orbit_prefix(&prat(27, 1), 73).unwrap();
    assert_eq!(vals[70], prat(1, 1));
    assert_eq!(vals[72], vals[70]);
    assert_eq!(rec.csv_row(), "27,70,2,1");
}

#[test]
fn orbit_small_examples() {
    let rec = rational_orbit(&binary(), &prat(13, 1), 100, 10).unwrap();
    assert_eq!(rec.status, OrbitStatus::UltimatelyPeriodic);
    assert_eq!(rec.initial_length, 4);
    assert_eq!(rec.period_digits, vec![0]);

    let rec = rational_orbit(&lin(2, &[(0, -3), (0, -1)]), &prat(284, 1), 100_000, 10).unwrap();
    assert_eq!(rec.initial_length, 160);
    assert_eq!(rec.period_digits, vec![0]);

    // purely periodic starts anchor at themselves
    let f = collatz();
    let rec = rational_orbit(&f, &prat(1, 1), 100, 10).unwrap();
    assert_eq!(rec.status, OrbitStatus::Periodic);
    assert_eq!(rec.initial_length, 0);
    assert_eq!(rec.period_digits, vec![1, 0]);
    let rec = rational_orbit(&f, &prat(2, 1), 100, 10).unwrap();
    assert_eq!(rec.status, OrbitStatus::Periodic);
    assert_eq!(rec.initial_length, 0);
    assert_eq!(rec.period_digits, vec![0, 1]);

    // a rational tail: −5/3 falls into the {−2/3, −1/3} cycle anchored at −1/3
    let rec = rational_orbit(&binary(), &prat(-5, 3), 100, 10).unwrap();
    assert_eq!(rec.status, OrbitStatus::UltimatelyPeriodic);
    assert_eq!(rec.initial_length, 3);
    assert_eq!(rec.period_digits, vec![1, 0]);
    assert_eq!(rec.max_denominator, BigUint::from(3u32));
}

#[test]
fn orbit_timeouts_and_left_rationals() {
    let f = collatz();
    let rec = rational_orbit(&f, &prat(27, 1), 10, 100).unwrap();
    assert_eq!(rec.status, OrbitStatus::Timeout);
    assert_eq!(rec.steps_used, 10);

    // denominators explode by a factor 11 on every even step
    let g = LinSystem::new(2, vec![(prat(2, 1), prat(3, 11)), (prat(1, 1), prat(-11, 1))]).unwrap();
    let rec = rational_orbit(&g, &prat(27, 1), 10_000, 5).unwrap();
    assert_eq!(rec.status, OrbitStatus::Timeout);
    assert!(rec.max_denominator > BigUint::from(100_000u32));

    assert!(matches!(
        rational_orbit(&f, &prat(1, 2), 10, 10),
        Err(LinError::LeftRationals(_))
    ));
}

#[test]
fn orbit_brent_resume_and_checkpoints() {
    let f = collatz();
    let start = prat(27, 1);
    let baseline = rational_orbit(&f, &start, 10_000, 100).unwrap();

    // tiny memory cap forces the Brent fallback and the replay pass
    let params = OrbitParams {
        max_steps: 10_000,
        max_digits: 100,
        memory_cap: 4,
        checkpoint_every: 0,
    };
    let rec = rational_orbit_full(&f, &start, &params, None, &mut |_, _| true).unwrap();
    assert_eq!(rec.status, baseline.status);
    assert_eq!(rec.initial_length, baseline.initial_length);
    assert_eq!(rec.period_length, baseline.period_length);
    assert_eq!(rec.period_digits, baseline.period_digits);

    // checkpoints fire on schedule with the true orbit states
    let params = OrbitParams {
        max_steps: 10_000,
        max_digits: 100,
        memory_cap: 1 << 20,
        checkpoint_every: 7,
    };
    let vals = f.orbit_prefix(&start, 80).unwrap();
    let mut seen = Vec::new();
    let rec = rational_orbit_full(&f, &start, &params, None, &mut |s, x| {
        seen.push((s, x.clone()));
        true
    })
    .unwrap();
    assert_eq!(rec.initial_length, 70);
    assert!(!seen.is_empty());
    for (s, x) in &seen {
        assert_eq!(*s % 7, 0);
        assert_eq!(vals[*s as usize], *x);
    }

    // resuming from a checkpoint reproduces the exact record
    let rec = rational_orbit_full(
        &f,
        &start,
        &params,
        Some((vals[10].clone(), 10)),
        &mut |_, _| true,
    )
    .unwrap();
    assert_eq!(rec.status, OrbitStatus::UltimatelyPeriodic);
    assert_eq!(rec.initial_length, 70);
    assert_eq!(rec.period_digits, vec![1, 0]);

    // an aborting observer produces a Timeout, never a wrong answer
    let rec = rational_orbit_full(&f, &start, &params, None, &mut |_, _| false).unwrap();
    assert_eq!(rec.status, OrbitStatus::Timeout);
}

#[test]
fn expansive_systems_never_settle_beyond_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11A0_0008);
    let slopes = [3i64, -3, 5, -5, 7, -7];
    let mut samples = 0;
    for &b0 in &slopes {
        for &b1 in &slopes {
            let f = lin(2, &[(0, b0), (1, b1)]);
            let c = classify(&f);
            assert_eq!(c.growth, Growth::Expansive);
            let m = c.radius.unwrap();
            let floor = m.floor().to_integer();
            for _ in 0..3 {
                let off = rng.gen_range(1i64..40);
                let n = PRat::from_integer(&floor + int(off));
                let n = if rng.gen_bool(0.5) { -n } else { n };
                let rec = rational_orbit(&f, &n, 300, 1_000).unwrap();
                assert_eq!(rec.status, OrbitStatus::Timeout);
                samples += 1;
            }
        }
    }
    assert!(samples >= 100);
}

// ---------------------------------------------------------------------------
// the experiment scan

#[test]
fn scan_family_enumeration() {
    let systems = enumerate_slopes(2);
    assert_eq!(systems.len(), 12);
    assert!(systems.contains(&vec![-3, -1]));
    assert!(systems.contains(&vec![1, -3]));
    assert!(systems
        .iter()
        .all(|s| s.iter().product::<i64>().abs() < 4 && s.iter().all(|b| b % 2 != 0)));
}

#[test]
fn scan_base_2() {
    let report = scan_mi_mp(2, 1000, |_| true);
    assert_eq!(report.systems_scanned, 12);
    assert_eq!(report.max_initial, 160);
    assert_eq!(
        report.initial_witnesses,
        vec![
            ScanWitness {
                slopes: vec![-3, -1],
                start: 284,
                slope_product: 3
            },
            ScanWitness {
                slopes: vec![-3, -1],
                start: 851,
                slope_product: 3
            },
        ]
    );
    assert_eq!(report.max_period, 19);
    assert_eq!(report.period_witnesses.len(), 261);
    assert!(report.period_witnesses.contains(&ScanWitness {
        slopes: vec![1, -3],
        start: 609,
        slope_product: -3
    }));
}

#[test]
fn scan_base_3() {
    let report = scan_mi_mp(3, 1000, |_| true);
    assert_eq!(report.systems_scanned, 928);
    assert_eq!(report.max_initial, 52401);
    assert_eq!(
        report.initial_witnesses,
        vec![ScanWitness {
            slopes: vec![1, -26, -1],
            start: 796,
            slope_product: 26
        }]
    );
    assert_eq!(report.max_period, 3905);
    assert_eq!(report.period_witnesses.len(), 46);
    assert!(report.period_witnesses.contains(&ScanWitness {
        slopes: vec![-13, -1, 2],
        start: 608,
        slope_product: 26
    }));
}

#[test]
fn scan_trivial_bounds() {
    let report = scan_mi_mp(2, 1, |_| true);
    assert_eq!(report.systems_scanned, 12);
    assert!(!report.initial_witnesses.is_empty());
    assert!(!report.period_witnesses.is_empty());
    // the filter narrows the family
    let only_positive = scan_mi_mp(2, 10, |s| s.iter().all(|&b| b > 0));
    assert_eq!(only_positive.systems_scanned, 3); // (1,1), (1,3), (3,1)
}
