use super::minatar::{count, paint, set, Grid, GridGame, ACT_LEFT, ACT_RIGHT, GRID};
use super::mt19937::Mt19937;

const PADDLE: usize = 0;
const BALL: usize = 1;
const TRAIL: usize = 2;
const BRICK: usize = 3;

/// Ball directions: 0 up-left, 1 up-right, 2 down-right, 3 down-left.
#[derive(Clone, Debug, Default)]
pub struct Breakout {
    pub ball_x: i32,
    pub ball_y: i32,
    pub ball_dir: usize,
    pub pos: i32,
    pub last_x: i32,
    pub last_y: i32,
    pub strike: bool,
    pub terminal: bool,
    pub bricks: Grid,
}

impl Breakout {
    fn fill_bricks(&mut self) {
        for row in &mut self.bricks[1..4] {
            row.iter_mut().for_each(|b| *b = true);
        }
    }
}

impl GridGame for Breakout {
    const NAME: &'static str = "breakout";
    const CHANNELS: usize = 4;
    const MAX_REWARD: f64 = 1.0;

    fn reset(&mut self, rng: &mut Mt19937) {
        self.ball_y = 3;
        let (x, dir) = [(0, 2), (9, 3)][rng.randint(2) as usize];
        self.ball_x = x;
        self.ball_dir = dir;
        self.pos = 4;
        self.bricks = [[false; GRID]; GRID];
        self.fill_bricks();
        self.strike = false;
        self.last_x = self.ball_x;
        self.last_y = self.ball_y;
        self.terminal = false;
    }

    fn act(&mut self, action: usize) -> (u32, bool) {
        let mut r = 0;
        if self.terminal {
            return (r, true);
        }
        if action == ACT_LEFT {
            self.pos = (self.pos - 1).max(0);
        } else if action == ACT_RIGHT {
            self.pos = (self.pos + 1).min(9);
        }

        self.last_x = self.ball_x;
        self.last_y = self.ball_y;
        let (dx, dy) = [(-1, -1), (1, -1), (1, 1), (-1, 1)][self.ball_dir];
        let mut new_x = self.ball_x + dx;
        let mut new_y = self.ball_y + dy;

        let mut strike_toggle = false;
        if !(0..=9).contains(&new_x) {
            new_x = new_x.clamp(0, 9);
            self.ball_dir = [1, 0, 3, 2][self.ball_dir];
        }
        if new_y < 0 {
            new_y = 0;
            self.ball_dir = [3, 2, 1, 0][self.ball_dir];
        } else if self.bricks[new_y as usize][new_x as usize] {
            strike_toggle = true;
            if !self.strike {
                r += 1;
                self.strike = true;
                self.bricks[new_y as usize][new_x as usize] = false;
                new_y = self.last_y;
                self.ball_dir = [3, 2, 1, 0][self.ball_dir];
            }
        } else if new_y == 9 {
            if count(&self.bricks) == 0 {
                self.fill_bricks();
            }
            if self.ball_x == self.pos {
                self.ball_dir = [3, 2, 1, 0][self.ball_dir];
                new_y = self.last_y;
            } else if new_x == self.pos {
                self.ball_dir = [2, 3, 0, 1][self.ball_dir];
                new_y = self.last_y;
            } else {
                self.terminal = true;
            }
        }

        if !strike_toggle {
            self.strike = false;
        }
        self.ball_x = new_x;
        self.ball_y = new_y;
        (r, self.terminal)
    }

    fn render(&self, out: &mut [u8]) {
        set(out, BALL, self.ball_y as usize, self.ball_x as usize);
        set(out, PADDLE, 9, self.pos as usize);
        set(out, TRAIL, self.last_y as usize, self.last_x as usize);
        paint(out, BRICK, &self.bricks);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Environment, MinAtar};

    fn channel(frame: &[u8], c: usize) -> &[u8] {
        &frame[c * 100..(c + 1) * 100]
    }

    #[test]
    fn initial_frame_has_full_bricks_and_one_ball() {
        for seed in 0..10 {
            let mut env = MinAtar::new(Breakout::default(), 0.1);
            env.reset(Some(seed));
            let f = env.frame().to_vec();
            let bricks = channel(&f, BRICK);
            for r in 0..10 {
                let n: u8 = bricks[r * 10..(r + 1) * 10].iter().sum();
                assert_eq!(n, if (1..4).contains(&r) { 10 } else { 0 });
            }
            assert_eq!(channel(&f, BALL).iter().map(|&v| v as u32).sum::<u32>(), 1);
            assert_eq!(channel(&f, PADDLE)[94], 1);
            let ball = channel(&f, BALL).iter().position(|&v| v == 1).unwrap();
            assert!(ball == 30 || ball == 39);
        }
    }

    /// Hand-simulated episode without sticky actions: the ball starts at
    /// (row 3, col 0) heading down-right, the paddle walks right to meet
    /// it, the ball bounces and takes out one brick on the way up.
    #[test]
    fn scripted_bounce_and_brick() {
        let mut g = Breakout::default();
        // seed 0 starts the ball on the left (randint(2) == 0)
        let mut rng = Mt19937::new(0);
        g.reset(&mut rng);
        assert_eq!((g.ball_x, g.ball_y, g.ball_dir), (0, 3, 2));
        // ball: (0,3)->(1,4)->(2,5)->(3,6)->(4,7)->(5,8); paddle 4 -> 5 by then
        let actions = [3, 0, 0, 0, 0];
        for a in actions {
            assert_eq!(g.act(a), (0, false));
        }
        assert_eq!((g.ball_x, g.ball_y, g.pos), (5, 8, 5));
        // next move lands on row 9 above the paddle's column: bounce up-right
        assert_eq!(g.act(0), (0, false));
        assert_eq!((g.ball_x, g.ball_y, g.ball_dir), (6, 8, 1));
        // up-right: (7,7) (8,6) (9,5), then the wall flips it to up-left at (9,4)
        for _ in 0..4 {
            assert_eq!(g.act(0), (0, false));
        }
        assert_eq!((g.ball_x, g.ball_y, g.ball_dir), (9, 4, 0));
        // next target (8,3) is a brick: destroyed, ball reflected down-left
        assert_eq!(g.act(0), (1, false));
        assert!(!g.bricks[3][8]);
        assert_eq!((g.ball_x, g.ball_y, g.ball_dir), (8, 4, 3));
        assert_eq!(count(&g.bricks), 29);
        // 12 ticks, one brick
        assert_eq!(g.act(0), (0, false));
    }

    #[test]
    fn missing_the_ball_ends_the_episode() {
        let mut g = Breakout::default();
        let mut rng = Mt19937::new(0);
        g.reset(&mut rng);
        // paddle runs away to the far left
        let mut last = (0, false);
        for _ in 0..6 {
            last = g.act(ACT_LEFT);
        }
        assert_eq!(last, (0, true));
        assert_eq!(g.ball_y, 9);
        let mut env = MinAtar::new(Breakout::default(), 0.0);
        env.reset(Some(0));
        let mut done = false;
        for _ in 0..6 {
            let s = env.step(ACT_LEFT).unwrap();
            assert_eq!(s.reward, 0.0);
            done = s.done;
        }
        assert!(done);
        assert!(env.step(0).is_err());
    }
}
