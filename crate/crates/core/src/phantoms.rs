//! Letter-shaped coefficients, the standard initial/boundary data and the
//! frozen scenario bundles of the reproduction runs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::forward::LateralTrace;
use crate::grid::{ScalarField, SpaceTimeGrid};

pub const BITMAP_SIZE: usize = 16;

const A_BITMAP: &str = include_str!("../data/letters/A.txt");
const OMEGA_BITMAP: &str = include_str!("../data/letters/Omega.txt");

/// A 16×16 glyph. `rows[0]` is the top line of the art (largest `x2`);
/// columns run along `x1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    rows: [[bool; BITMAP_SIZE]; BITMAP_SIZE],
}

impl Bitmap {
    /// Parses 16 lines of 16 characters, `#` for 1 and `.` for 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = [[false; BITMAP_SIZE]; BITMAP_SIZE];
        let mut r = 0;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if body.trim().is_empty() {
                offset += line.len();
                continue;
            }
            if r == BITMAP_SIZE {
                return Err(Error::Parse { offset, reason: "more than 16 bitmap rows".into() });
            }
            if body.len() != BITMAP_SIZE {
                return Err(Error::Parse { offset, reason: format!("row has {} cells, expected 16", body.len()) });
            }
            for (c, ch) in body.bytes().enumerate() {
                rows[r][c] = match ch {
                    b'#' => true,
                    b'.' => false,
                    other => {
                        return Err(Error::Parse {
                            offset: offset + c,
                            reason: format!("unexpected character {:?}", other as char),
                        })
                    }
                };
            }
            r += 1;
            offset += line.len();
        }
        if r != BITMAP_SIZE {
            return Err(Error::Parse { offset, reason: format!("{r} bitmap rows, expected 16") });
        }
        Ok(Self { rows })
    }

    /// Cell at column `cx` (along `x1`) and `x2` cell `cy`, both from the
    /// lower-left corner.
    pub fn cell(&self, cx: usize, cy: usize) -> bool {
        self.rows[BITMAP_SIZE - 1 - cy][cx]
    }

    pub fn count(&self) -> usize {
        self.rows.iter().flatten().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Letter {
    A,
    Omega,
    Custom(Bitmap),
}

impl Letter {
    pub fn bitmap(&self) -> Bitmap {
        match self {
            Letter::A => Bitmap::parse(A_BITMAP).expect("bundled bitmap"),
            Letter::Omega => Bitmap::parse(OMEGA_BITMAP).expect("bundled bitmap"),
            Letter::Custom(b) => b.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Letter::A => "A",
            Letter::Omega => "Omega",
            Letter::Custom(_) => "custom",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Letter::A),
            "Omega" | "omega" | "O" => Ok(Letter::Omega),
            other => Err(Error::Unsupported(format!("letter {other:?} (use a custom bitmap)"))),
        }
    }
}

/// `nx × nx` raster of a glyph, indexed `(i, j)` with `i` along `x1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    nx: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.nx + j]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Nearest-neighbour upsampling: raster cell `i` reads bitmap cell
/// `⌊16 i / nx⌋`.
pub fn letter_mask(letter: &Letter, nx: usize) -> Result<Mask> {
    if nx < 8 {
        return Err(domain(format!("mask resolution must be at least 8, got {nx}")));
    }
    let bm = letter.bitmap();
    let cell = |i: usize| i * BITMAP_SIZE / nx;
    let mut bits = Vec::with_capacity(nx * nx);
    for i in 0..nx {
        for j in 0..nx {
            bits.push(bm.cell(cell(i), cell(j)));
        }
    }
    Ok(Mask { nx, bits })
}

/// `c = background + amplitude · mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub letter: Letter,
    pub background: f64,
    pub amplitude: f64,
}

impl Phantom {
    pub fn new(letter: Letter) -> Self {
        Self { letter, background: 0.0, amplitude: 1.0 }
    }

    /// Mask at the nodes of `grid`: a node reads the bitmap cell that
    /// contains it, the far edges belonging to the last cell.
    pub fn mask_on(&self, grid: &SpaceTimeGrid) -> ScalarField {
        let bm = self.letter.bitmap();
        let cell = |x: f64| {
            let frac = (x - grid.a()) / (grid.b() - grid.a());
            ((frac * BITMAP_SIZE as f64).floor().max(0.0) as usize).min(BITMAP_SIZE - 1)
        };
        ScalarField::from_fn_space(*grid, |x, y| if bm.cell(cell(x), cell(y)) { 1.0 } else { 0.0 })
    }

    pub fn coefficient(&self, grid: &SpaceTimeGrid) -> ScalarField {
        self.mask_on(grid).map(|m| self.background + self.amplitude * m)
    }

    /// The coefficient clipped below at zero.
    pub fn coefficient_nonnegative(&self, grid: &SpaceTimeGrid) -> ScalarField {
        self.coefficient(grid).map(|v| v.max(0.0))
    }
}

fn check_unit_square(grid: &SpaceTimeGrid) -> Result<()> {
    if grid.a() != 1.0 || grid.b() != 2.0 {
        return Err(domain(format!("standard data are defined on (1, 2)², got ({}, {})²", grid.a(), grid.b())));
    }
    Ok(())
}

/// `u(x, −T) = 1 + sin(π(x1 − 1)) sin(π(x2 − 1))`.
pub fn standard_initial(grid: &SpaceTimeGrid) -> Result<ScalarField> {
    check_unit_square(grid)?;
    Ok(ScalarField::from_fn_space(*grid, |x, y| 1.0 + (PI * (x - 1.0)).sin() * (PI * (y - 1.0)).sin()))
}

/// `u = 1` on the lateral boundary.
pub fn standard_boundary(grid: &SpaceTimeGrid) -> Result<LateralTrace> {
    check_unit_square(grid)?;
    Ok(LateralTrace::constant(*grid, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    Test1T1,
    Test1T01,
    Test2Eps002,
    Test2Eps001,
    Test3Noisy,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] =
        [Self::Test1T1, Self::Test1T01, Self::Test2Eps002, Self::Test2Eps001, Self::Test3Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Test1T1 => "test1_T1",
            Self::Test1T01 => "test1_T01",
            Self::Test2Eps002 => "test2_eps002",
            Self::Test2Eps001 => "test2_eps001",
            Self::Test3Noisy => "test3_noisy",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| domain(format!("unknown scenario {s:?}")))
    }
}

/// Every parameter of one reproduction run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub letters: Vec<Letter>,
    pub background: f64,
    pub amplitude: f64,
    pub t_half: f64,
    pub t0: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Forward-solver grid.
    pub fine: SpaceTimeGrid,
    pub inversion: SpaceTimeGrid,
    /// Nodes per axis of the `f0` detector grid.
    pub f0_nx: usize,
    pub lambda: f64,
    pub beta: f64,
    pub k: u8,
    pub boundary_penalty: f64,
    /// Time unit of the regularizer, equal to `T`.
    pub time_unit: f64,
    pub grad_tol: f64,
}

impl Scenario {
    pub fn phantom(&self, letter: Letter) -> Phantom {
        Phantom { letter, background: self.background, amplitude: self.amplitude }
    }

    /// Stable `key=value` form.
    pub fn serialize(&self) -> String {
        let grid = |g: &SpaceTimeGrid| format!("{}x{}x{} A={} B={} T={}", g.nx(), g.nx(), g.nt(), g.a(), g.b(), g.t_half());
        let letters: Vec<&str> = self.letters.iter().map(|l| l.name()).collect();
        let mut s = String::new();
        writeln!(s, "scenario={}", self.id.name()).unwrap();
        writeln!(s, "letters={}", letters.join(",")).unwrap();
        writeln!(s, "background={:?}", self.background).unwrap();
        writeln!(s, "amplitude={:?}", self.amplitude).unwrap();
        writeln!(s, "T={:?}", self.t_half).unwrap();
        writeln!(s, "t0={:?}", self.t0).unwrap();
        writeln!(s, "sigma={:?}", self.sigma).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "fine_grid={}", grid(&self.fine)).unwrap();
        writeln!(s, "inversion_grid={}", grid(&self.inversion)).unwrap();
        writeln!(s, "f0_detectors={}x{}", self.f0_nx, self.f0_nx).unwrap();
        writeln!(s, "lambda={:?}", self.lambda).unwrap();
        writeln!(s, "beta={:?}", self.beta).unwrap();
        writeln!(s, "k={}", self.k).unwrap();
        writeln!(s, "boundary_penalty={:?}", self.boundary_penalty).unwrap();
        writeln!(s, "time_unit={:?}", self.time_unit).unwrap();
        writeln!(s, "grad_tol={:?}", self.grad_tol).unwrap();
        s
    }

    /// SHA-256 of [`Scenario::serialize`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }
}

/// The frozen bundle for `id`. `paper_fine` switches the forward grid to
/// 641 × 641 × 513.
pub fn scenario(id: ScenarioId, paper_fine: bool) -> Scenario {
    let (t_half, t0, sigma) = match id {
        ScenarioId::Test1T1 => (1.0, 0.0, 0.0),
        ScenarioId::Test1T01 => (0.1, 0.0, 0.0),
        ScenarioId::Test2Eps002 => (0.1, -0.08, 0.0),
        ScenarioId::Test2Eps001 => (0.1, -0.09, 0.0),
        ScenarioId::Test3Noisy => (1.0, 0.0, 0.05),
    };
    let test2 = matches!(id, ScenarioId::Test2Eps002 | ScenarioId::Test2Eps001);
    let test3 = id == ScenarioId::Test3Noisy;
    // Test 2 needs t0 = -0.08 and -0.09 on both time grids.
    let inversion_nt = if test2 { 21 } else { 17 };
    let (fine_nx, fine_nt) = match (paper_fine, test2, test3) {
        (true, _, _) => (641, 513),
        (false, true, _) => (129, 161),
        (false, false, true) => (161, 129),
        (false, false, false) => (129, 129),
    };
    let grid = |nx, nt| SpaceTimeGrid::new(1.0, 2.0, t_half, nx, nt).expect("valid scenario grid");
    Scenario {
        id,
        letters: vec![Letter::A, Letter::Omega],
        background: 0.0,
        amplitude: 1.0,
        t_half,
        t0,
        sigma,
        seed: 20_190_601,
        fine: grid(fine_nx, fine_nt),
        inversion: grid(17, inversion_nt),
        f0_nx: if test3 { 161 } else { 17 },
        lambda: 1.0,
        beta: 0.01,
        k: 3,
        boundary_penalty: 1e3,
        time_unit: t_half,
        grad_tol: 1e-2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks() {
        let a16 = letter_mask(&Letter::A, 16).unwrap();
        let bm = Letter::A.bitmap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(a16.get(i, j), bm.cell(i, j));
            }
        }
        let a32 = letter_mask(&Letter::A, 32).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(a32.get(i, j), bm.cell(i / 2, j / 2));
            }
        }
        assert_eq!(a32.count(), 4 * bm.count());
        let o16 = letter_mask(&Letter::Omega, 16).unwrap();
        let differ = (0..16).flat_map(|i| (0..16).map(move |j| (i, j))).filter(|&(i, j)| a16.get(i, j) != o16.get(i, j)).count();
        assert!(differ * 5 >= 256, "{differ}");
        assert!(letter_mask(&Letter::A, 7).is_err());
    }

    #[test]
    fn bitmap_orientation() {
        let bm = Letter::A.bitmap();
        // The apex sits at the top of the art, the open legs at the bottom.
        assert!(bm.cell(7, 14) && bm.cell(8, 14));
        assert!(bm.cell(1, 2) && bm.cell(14, 2));
        assert!(!bm.cell(7, 2));
    }

    #[test]
    fn bitmap_parse_errors() {
        let good = ".".repeat(16) + "\n";
        assert!(Bitmap::parse(&good.repeat(16)).is_ok());
        assert!(matches!(Bitmap::parse(&good.repeat(15)), Err(Error::Parse { .. })));
        let bad = good.repeat(2) + "...x............\n" + &good.repeat(13);
        match Bitmap::parse(&bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 34 + 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn phantom_fields() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 17, 5).unwrap();
        let p = Phantom { letter: Letter::Omega, background: 0.25, amplitude: 0.0 };
        assert!(p.coefficient(&g).values().iter().all(|&v| v == 0.25));
        let p = Phantom { letter: Letter::A, background: 0.0, amplitude: -0.5 };
        let c = p.coefficient(&g);
        let m = p.mask_on(&g);
        for (cv, mv) in c.values().iter().zip(m.values()) {
            assert!(*mv == 0.0 || *mv == 1.0);
            assert_eq!(*cv, -0.5 * mv);
        }
        assert!(p.coefficient_nonnegative(&g).values().iter().all(|&v| v == 0.0));
        // On the 17-node grid node i reads cell min(i, 15).
        let bm = Letter::A.bitmap();
        assert_eq!(m.at_s(16, 14) == 1.0, bm.cell(15, 14));
        assert_eq!(m.at_s(8, 14) == 1.0, bm.cell(8, 14));
    }

    #[test]
    fn standard_data() {
        let g = SpaceTimeGrid::new(1.0, 2.0, 1.0, 17, 5).unwrap();
        let f = standard_initial(&g).unwrap();
        assert_eq!(f.at_s(0, 0), 1.0);
        assert!((f.at_s(8, 8) - 2.0).abs() < 1e-15);
        assert!(f.min() >= 1.0 - 1e-15);
        for i in 0..17 {
            for j in [0, 16] {
                assert!((f.at_s(i, j) - 1.0).abs() < 1e-14 && (f.at_s(j, i) - 1.0).abs() < 1e-14);
            }
        }
        let bad = SpaceTimeGrid::new(1.0, 3.0, 1.0, 5, 5).unwrap();
        assert!(standard_initial(&bad).is_err());
        assert_eq!(standard_boundary(&g).unwrap().min(), 1.0);
    }

    #[test]
    fn scenario_values() {
        let s = scenario(ScenarioId::Test1T1, false);
        assert_eq!((s.t_half, s.t0, s.sigma), (1.0, 0.0, 0.0));
        assert_eq!((s.inversion.nx(), s.inversion.nt()), (17, 17));
        assert_eq!(s.inversion.hx(), 1.0 / 16.0);
        let s = scenario(ScenarioId::Test2Eps001, false);
        assert_eq!((s.t_half, s.t0, s.sigma), (0.1, -0.09, 0.0));
        assert!(s.inversion.time_index(s.t0).is_ok());
        let s = scenario(ScenarioId::Test3Noisy, false);
        assert_eq!((s.t_half, s.t0, s.sigma, s.f0_nx), (1.0, 0.0, 0.05, 161));
        assert_eq!((s.lambda, s.beta, s.k), (1.0, 0.01, 3));
        let s = scenario(ScenarioId::Test1T01, true);
        assert_eq!((s.fine.nx(), s.fine.nt()), (641, 513));
        for id in ScenarioId::ALL {
            assert_eq!(ScenarioId::from_name(id.name()).unwrap(), id);
        }
    }

    #[test]
    fn scenario_digests_are_frozen() {
        let golden = [
            (ScenarioId::Test1T1, "5dfa599d781187228e54c4448b59ebbf76de9110d55b265911533b6961412e2b"),
            (ScenarioId::Test1T01, "811dacf07f0035380d525c547f9edeaaef6c22a8eca59065b9666cb132f7bcdb"),
            (ScenarioId::Test2Eps002, "21f15a6a28a3d1a36d9afe7a115413ad7655fae269f7a3b8c33e6c8adcf8bce6"),
            (ScenarioId::Test2Eps001, "b1f2dca783044d4fae223d59905a5084fbee80cac262b202142bbedfe0554529"),
            (ScenarioId::Test3Noisy, "df072656918b7177a578fba5271a346f9f466e27e2ac0082c9387936454bd222"),
        ];
        for (id, digest) in golden {
            assert_eq!(scenario(id, false).digest(), digest, "{}", id.name());
        }
        let s = scenario(ScenarioId::Test1T1, false).serialize();
        assert!(s.starts_with("scenario=test1_T1\nletters=A,Omega\n"));
        assert!(s.contains("fine_grid=129x129x129 A=1 B=2 T=1\n"));
    }
}
