use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use padic::arith::{prat, pow_u, Residue};
use padic::systems::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn collatz() -> FibredSystem {
    FibredSystem::from_int_polys(2, &[&[0, 1], &[1, 3]]).unwrap()
}

fn binary() -> FibredSystem {
    FibredSystem::from_int_polys(2, &[&[0, 1], &[-1, 1]]).unwrap()
}

#[test]
fn apply_examples() {
    let fc = collatz();
    let out = apply_prat(&fc, &prat(7, 1)).unwrap();
    assert_eq!(out, prat(11, 1));

    let f2 = binary();
    assert_eq!(apply_prat(&f2, &prat(13, 1)).unwrap(), prat(6, 1));

    // the 2-cycle at 1
    let a = apply_prat(&fc, &prat(1, 1)).unwrap();
    assert_eq!(a, prat(2, 1));
    let b = apply_prat(&fc, &a).unwrap();
    assert_eq!(b, prat(1, 1));

    // residues lose one unit of precision per step
    let r = Residue::from_u64(2, 5, 7);
    let out = apply_residue(&fc, &r).unwrap();
    assert_eq!(out.precision(), 4);
    assert_eq!(out.value().to_u64().unwrap(), 11);
    let exhausted = Residue::from_u64(2, 0, 0);
    assert!(matches!(apply_residue(&fc, &exhausted), Err(SystemsError::PrecisionExhausted)));

    // rationals outside Z_p are rejected
    assert!(matches!(
        apply_prat(&fc, &prat(1, 2)),
        Err(SystemsError::NonIntegralValue(_))
    ));
}

#[test]
fn digit_expansion_examples() {
    let f = FibredSystem::from_int_polys(
        3,
        &[&[-6, 1, -4, 7], &[1, -1, 0, 0, 0, 0, 0, 3], &[2, 6, 1]],
    )
    .unwrap();
    let n = Residue::from_u64(3, 5, 17);
    let (digits, iterates) = digit_expansion_with_iterates(&f, &n, 5).unwrap();
    assert_eq!(digits, vec![2, 2, 1, 2, 0]);
    // every reduced iterate after the first stays below 3^4
    assert!(iterates[1..].iter().all(|x| x < &pow_u(3, 4)));
    assert_eq!(iterates.last().unwrap().to_u64().unwrap(), 63);

    let f2 = binary();
    let digits = digit_expansion(&f2, &Residue::from_u64(2, 4, 13), 4).unwrap();
    assert_eq!(digits, vec![1, 0, 1, 1]);

    let fc = collatz();
    assert_eq!(digit_expansion(&fc, &Residue::from_u64(2, 4, 0), 4).unwrap(), vec![0, 0, 0, 0]);

    // too little precision
    assert!(matches!(
        digit_expansion(&fc, &Residue::from_u64(2, 2, 1), 3),
        Err(SystemsError::PrecisionExhausted)
    ));
}

#[test]
fn digit_expansion_requires_verified_weak_block_for_tables() {
    // table for the binary system, mod 2^3
    let table_branch = |shift: u64| {
        let map = (0..8u64).map(|v| BigUint::from((v + 8 - shift) % 8)).collect();
        Branch::Table { k: 3, map }
    };
    let f = FibredSystem::new(2, vec![table_branch(0), table_branch(1)]).unwrap();
    let n = Residue::from_u64(2, 3, 5);
    assert!(matches!(
        digit_expansion(&f, &n, 3),
        Err(SystemsError::WeakBlockUnverified)
    ));
    assert!(block_check_bruteforce(&f, 3));
    assert_eq!(digit_expansion(&f, &n, 3).unwrap(), vec![1, 0, 1]);
}

#[test]
fn reduced_equals_exact_on_random_integral_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD161);
    for _ in 0..200 {
        let p = *[2u64, 3].iter().nth(rng.gen_range(0..2)).unwrap();
        let branches: Vec<Branch> = (0..p)
            .map(|_| {
                let deg = rng.gen_range(0..5);
                Branch::Poly(
                    (0..=deg).map(|_| prat(rng.gen_range(-9i64..10), 1)).collect(),
                )
            })
            .collect();
        let f = FibredSystem::new(p, branches).unwrap();
        let k = rng.gen_range(1..=8u32);
        let n = rng.gen_range(0..pow_u(p, k).to_u64().unwrap());
        let reduced = digit_expansion(&f, &Residue::from_u64(p, k, n), k).unwrap();
        let exact = digit_expansion_exact(&f, &prat(n as i64, 1), k).unwrap();
        assert_eq!(reduced, exact, "p={p} n={n} k={k} F={f}");
    }
}

#[test]
fn block_checks() {
    assert!(block_check_bruteforce(&collatz(), 4));
    let bad = FibredSystem::from_int_polys(2, &[&[0, 2], &[-1, 1]]).unwrap();
    assert!(!block_check_bruteforce(&bad, 2));
    assert!(block_check_bruteforce(&bad, 0));
    // flags recorded
    let fc = collatz();
    assert_eq!(fc.verified_block_level(), 0);
    assert!(block_check_bruteforce(&fc, 3));
    assert_eq!(fc.verified_block_level(), 3);
    assert!(fc.verified_weak_block_level() >= 3);
}

#[test]
fn apply_is_p_to_one_on_block_systems() {
    let f3 = FibredSystem::from_int_polys(
        3,
        &[&[-6, 1, -4, 7], &[1, -1, 0, 0, 0, 0, 0, 3], &[2, 6, 1]],
    )
    .unwrap();
    for (f, kmax) in [(collatz(), 6u32), (binary(), 6), (f3, 4)] {
        let p = f.base();
        for k in 1..=kmax {
            let m = pow_u(p, k).to_u64().unwrap();
            let mut hits = vec![0usize; m as usize];
            for n in 0..m * p {
                let out = apply_prat(&f, &prat(n as i64, 1)).unwrap();
                let idx = prat_mod_pk(&out, p, k).unwrap().to_usize().unwrap();
                hits[idx] += 1;
            }
            assert!(hits.iter().all(|&h| h == p as usize), "k={k} F={f}");
        }
    }
}

#[test]
fn canonical_form_examples() {
    let fc = collatz();
    let canon = canonical_form(&fc, 4).unwrap();
    // branch 1 on odd v is 3v+1 - (3v+1)%2, branch values on the other
    // class are zero
    match canon.branch(1) {
        Branch::Table { k, map } => {
            assert_eq!(*k, 4);
            for v in 0..16u64 {
                let want = if v % 2 == 1 { (3 * v + 1 - (3 * v + 1) % 2) % 16 } else { 0 };
                assert_eq!(map[v as usize].to_u64().unwrap(), want, "v={v}");
            }
        }
        other => panic!("expected table, got {other}"),
    }
    assert!(canon.is_flagged_weak_canonical());

    // same induced map on residues: digit tables agree
    for n in 0..16u64 {
        let a = digit_expansion_exact(&fc, &prat(n as i64, 1), 3).unwrap();
        assert!(block_check_bruteforce(&canon, 3));
        let b = digit_expansion(&canon, &Residue::from_u64(2, 3, n % 8), 3).unwrap();
        assert_eq!(a, b, "n={n}");
    }
}

#[test]
fn weak_canonicalize_examples() {
    let f = FibredSystem::from_int_polys(2, &[&[0, 1], &[0, 1]]).unwrap();
    let w = weak_canonicalize(&f).unwrap();
    assert_eq!(w, FibredSystem::from_int_polys(2, &[&[0, 1], &[-1, 1]]).unwrap());
    assert!(w.is_flagged_weak_canonical());

    // idempotent on an already weak-canonical system
    let again = weak_canonicalize(&w).unwrap();
    assert_eq!(again, w);

    // (x+1, 3x+2) normalizes to the Collatz system
    let g = FibredSystem::from_int_polys(2, &[&[1, 1], &[2, 3]]).unwrap();
    assert_eq!(weak_canonicalize(&g).unwrap(), collatz());

    // rational-coefficient branch whose low digit varies on its class has
    // no weak canonical form of the same kind
    let f = FibredSystem::new(
        2,
        vec![
            Branch::Poly(vec![prat(1, 1), prat(1, 1), prat(1, 2), prat(1, 1), prat(1, 16)]),
            Branch::poly_i64(&[-1, 1]),
        ],
    )
    .unwrap();
    assert!(matches!(weak_canonicalize(&f), Err(SystemsError::NonConstantLowDigit)));

    // table branches are adjusted pointwise
    let t = FibredSystem::new(
        2,
        vec![
            Branch::Table { k: 2, map: vec![2u32.into(), 3u32.into(), 0u32.into(), 1u32.into()] },
            Branch::Table { k: 2, map: vec![1u32.into(), 2u32.into(), 3u32.into(), 0u32.into()] },
        ],
    )
    .unwrap();
    let wt = weak_canonicalize(&t).unwrap();
    match wt.branch(0) {
        Branch::Table { map, .. } => {
            assert_eq!(
                map.iter().map(|v| v.to_u64().unwrap()).collect::<Vec<_>>(),
                vec![2, 2, 0, 0]
            );
        }
        other => panic!("expected table, got {other}"),
    }

    // quotient branches lose their constant class digit: (x²+2)/(x+2) is
    // ≡ 1 mod 2 on odd inputs, so the numerator drops one copy of x+2
    let r = FibredSystem::new(
        2,
        vec![
            Branch::poly_i64(&[0, 1]),
            Branch::RatFn {
                num: vec![BigInt::from(2), BigInt::zero(), BigInt::one()],
                den: vec![BigInt::from(2), BigInt::one()],
            },
        ],
    )
    .unwrap();
    let wr = weak_canonicalize(&r).unwrap();
    match wr.branch(1) {
        Branch::RatFn { num, den } => {
            assert_eq!(num, &[BigInt::zero(), BigInt::from(-1), BigInt::one()]);
            assert_eq!(den, &[BigInt::from(2), BigInt::one()]);
        }
        other => panic!("expected quotient, got {other}"),
    }
}

#[test]
fn reduce_degree_matches_published_pair() {
    let f = FibredSystem::from_int_polys(
        2,
        &[
            &[4, 75, 95, -40, 79, -13, -35, -47, -67, -36],
            &[48, -10, 98, -54, 10, -68, -92, -58, -1, 15],
        ],
    )
    .unwrap();
    let g = reduce_degree(&f, 4).unwrap();
    let want = FibredSystem::from_int_polys(2, &[&[4, 11, 11, 8], &[1, 1, 14]]).unwrap();
    assert_eq!(g, want);

    // digit tables agree to 4 digits
    for n in 0..16u64 {
        let a = digit_expansion_exact(&f, &prat(n as i64, 1), 4).unwrap();
        let b = digit_expansion_exact(&g, &prat(n as i64, 1), 4).unwrap();
        assert_eq!(a, b, "n={n}");
    }
}

#[test]
fn reduce_degree_identity_and_errors() {
    let f = FibredSystem::from_int_polys(2, &[&[0, 1], &[0, 1]]).unwrap();
    let g = reduce_degree(&f, 3).unwrap();
    assert_eq!(g, f);

    let with_table = FibredSystem::new(
        2,
        vec![Branch::poly_i64(&[0, 1]), Branch::Table { k: 1, map: vec![0u32.into(), 1u32.into()] }],
    )
    .unwrap();
    assert!(matches!(reduce_degree(&with_table, 3), Err(SystemsError::NonIntegralCoefficients)));

    let non_integral = FibredSystem::new(
        2,
        vec![Branch::Poly(vec![prat(0, 1), prat(1, 2)]), Branch::poly_i64(&[-1, 1])],
    )
    .unwrap();
    assert!(matches!(reduce_degree(&non_integral, 3), Err(SystemsError::NonIntegralCoefficients)));
}

#[test]
fn reduce_degree_random_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE6);
    for _ in 0..40 {
        let p = 2u64;
        let branches: Vec<Branch> = (0..p)
            .map(|_| {
                Branch::Poly((0..=6).map(|_| prat(rng.gen_range(-50i64..50), 1)).collect())
            })
            .collect();
        let f = FibredSystem::new(p, branches).unwrap();
        let g = reduce_degree(&f, 3).unwrap();
        for b in g.branches() {
            match b {
                Branch::Poly(c) => {
                    assert!(c.len() <= 3);
                    assert!(c.iter().all(|x| {
                        x.denom().is_one()
                            && !x.numer().is_negative()
                            && x.numer() < &BigInt::from(8)
                    }));
                }
                other => panic!("expected poly, got {other}"),
            }
        }
        for n in 0..8u64 {
            let a = digit_expansion_exact(&f, &prat(n as i64, 1), 3).unwrap();
            let b = digit_expansion_exact(&g, &prat(n as i64, 1), 3).unwrap();
            assert_eq!(a, b, "n={n} f={f}");
        }
    }
}

#[test]
fn text_grammar() {
    let fc: FibredSystem = "(x, 3x+1)@2".parse().unwrap();
    assert_eq!(fc, collatz());
    assert_eq!(fc.to_string(), "(x, 3x+1)@2");

    let f3: FibredSystem = "(7x^3-4x^2+x-6, 3x^7-x+1, x^2+6x+2)@3".parse().unwrap();
    assert_eq!(
        f3,
        FibredSystem::from_int_polys(
            3,
            &[&[-6, 1, -4, 7], &[1, -1, 0, 0, 0, 0, 0, 3], &[2, 6, 1]]
        )
        .unwrap()
    );
    assert_eq!(f3.to_string(), "(7x^3-4x^2+x-6, 3x^7-x+1, x^2+6x+2)@3");

    let rational: FibredSystem = "(21/5x, x-1)@2".parse().unwrap();
    match rational.branch(0) {
        Branch::Poly(c) => assert_eq!(c, &vec![prat(0, 1), prat(21, 5)]),
        other => panic!("expected poly, got {other}"),
    }
    assert_eq!(rational.to_string(), "(21/5x, x-1)@2");

    let quot: FibredSystem = "((x^2+1)/(3x+2), x-1)@2".parse().unwrap();
    match quot.branch(0) {
        Branch::RatFn { num, den } => {
            assert_eq!(num, &[BigInt::one(), BigInt::zero(), BigInt::one()]);
            assert_eq!(den, &[BigInt::from(2), BigInt::from(3)]);
        }
        other => panic!("expected quotient, got {other}"),
    }
    let redisplayed: FibredSystem = quot.to_string().parse().unwrap();
    assert_eq!(redisplayed, quot);

    let tab: FibredSystem = "(table^1[0,1], x-1)@2".parse().unwrap();
    match tab.branch(0) {
        Branch::Table { k, map } => {
            assert_eq!(*k, 1);
            assert_eq!(map, &vec![BigUint::zero(), BigUint::one()]);
        }
        other => panic!("expected table, got {other}"),
    }
    let round: FibredSystem = tab.to_string().parse().unwrap();
    assert_eq!(round, tab);

    assert!("(x, 3x+1)".parse::<FibredSystem>().is_err());
    assert!("(x)@2".parse::<FibredSystem>().is_err());
    assert!("(x, 3y+1)@2".parse::<FibredSystem>().is_err());
}

#[test]
fn json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x15De);
    let systems = vec![
        collatz(),
        "(21/5x, (x^2+1)/(3x+2))@2".parse().unwrap(),
        "(table^2[0,1,2,3], x-1)@2".parse().unwrap(),
    ];
    for f in systems {
        let j = f.to_json();
        let back = FibredSystem::from_json(&j).unwrap();
        assert_eq!(back, f);
    }
    for _ in 0..50 {
        let p = rng.gen_range(2..4u64);
        let branches: Vec<Branch> = (0..p)
            .map(|_| {
                Branch::Poly(
                    (0..=rng.gen_range(0..4))
                        .map(|_| prat(rng.gen_range(-20i64..20), rng.gen_range(1i64..7)))
                        .collect(),
                )
            })
            .collect();
        let f = FibredSystem::new(p, branches).unwrap();
        assert_eq!(FibredSystem::from_json(&f.to_json()).unwrap(), f);
    }
}

#[test]
fn shape_validation() {
    assert!(matches!(
        FibredSystem::new(2, vec![Branch::poly_i64(&[0, 1])]),
        Err(SystemsError::Shape(_))
    ));
    assert!(matches!(
        FibredSystem::new(
            2,
            vec![
                Branch::Table { k: 1, map: vec![BigUint::zero()] },
                Branch::poly_i64(&[0, 1])
            ]
        ),
        Err(SystemsError::Shape(_))
    ));
}
