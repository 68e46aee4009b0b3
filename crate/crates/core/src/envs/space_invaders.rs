use super::minatar::{count, paint, set, Grid, GridGame, ACT_FIRE, ACT_LEFT, ACT_RIGHT, GRID};
use super::mt19937::Mt19937;

const CANNON: usize = 0;
const ALIEN: usize = 1;
const ALIEN_LEFT: usize = 2;
const ALIEN_RIGHT: usize = 3;
const FRIENDLY_BULLET: usize = 4;
const ENEMY_BULLET: usize = 5;

const SHOT_COOL_DOWN: i32 = 5;
const ENEMY_MOVE_INTERVAL: i32 = 12;
const ENEMY_SHOT_INTERVAL: i32 = 10;

#[derive(Clone, Debug)]
pub struct SpaceInvaders {
    pub ramping: bool,
    pub pos: usize,
    pub friendly_bullets: Grid,
    pub enemy_bullets: Grid,
    pub aliens: Grid,
    /// -1 marching left, +1 marching right.
    pub alien_dir: i32,
    pub enemy_move_interval: i32,
    pub alien_move_timer: i32,
    pub alien_shot_timer: i32,
    pub ramp_index: u32,
    pub shot_timer: i32,
    pub terminal: bool,
}

impl SpaceInvaders {
    pub fn new(ramping: bool) -> Self {
        let mut s = Self {
            ramping,
            pos: 5,
            friendly_bullets: [[false; GRID]; GRID],
            enemy_bullets: [[false; GRID]; GRID],
            aliens: [[false; GRID]; GRID],
            alien_dir: -1,
            enemy_move_interval: ENEMY_MOVE_INTERVAL,
            alien_move_timer: ENEMY_MOVE_INTERVAL,
            alien_shot_timer: ENEMY_SHOT_INTERVAL,
            ramp_index: 0,
            shot_timer: 0,
            terminal: false,
        };
        s.spawn_aliens();
        s
    }

    fn spawn_aliens(&mut self) {
        for row in &mut self.aliens[0..4] {
            row[2..8].iter_mut().for_each(|a| *a = true);
        }
    }

    fn column_occupied(&self, col: usize) -> bool {
        self.aliens.iter().any(|row| row[col])
    }

    /// Lowest alien in the occupied column closest to `pos`; ties go to the
    /// lower column index.
    fn nearest_alien(&self, pos: usize) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..GRID).collect();
        order.sort_by_key(|&c| (c as i32 - pos as i32).abs());
        order.into_iter().find(|&c| self.column_occupied(c)).map(|c| {
            let row = (0..GRID).rev().find(|&r| self.aliens[r][c]).unwrap();
            (row, c)
        })
    }
}

impl Default for SpaceInvaders {
    fn default() -> Self {
        Self::new(true)
    }
}

fn roll_rows_down(g: &mut Grid) {
    g.rotate_right(1);
}

fn roll_cols(g: &mut Grid, dir: i32) {
    for row in g.iter_mut() {
        if dir > 0 {
            row.rotate_right(dir as usize);
        } else {
            row.rotate_left((-dir) as usize);
        }
    }
}

impl GridGame for SpaceInvaders {
    const NAME: &'static str = "space_invaders";
    const CHANNELS: usize = 6;
    // the cooldown allows at most two friendly bullets in flight
    const MAX_REWARD: f64 = 2.0;

    fn reset(&mut self, _rng: &mut Mt19937) {
        *self = Self::new(self.ramping);
    }

    fn act(&mut self, action: usize) -> (u32, bool) {
        let mut r = 0;
        if self.terminal {
            return (r, true);
        }

        if action == ACT_FIRE && self.shot_timer == 0 {
            self.friendly_bullets[9][self.pos] = true;
            self.shot_timer = SHOT_COOL_DOWN;
        } else if action == ACT_LEFT {
            self.pos = self.pos.saturating_sub(1);
        } else if action == ACT_RIGHT {
            self.pos = (self.pos + 1).min(9);
        }

        // friendly bullets move up and leave through the top
        self.friendly_bullets.rotate_left(1);
        self.friendly_bullets[9] = [false; GRID];

        // enemy bullets move down and leave through the bottom
        self.enemy_bullets.rotate_right(1);
        self.enemy_bullets[0] = [false; GRID];
        if self.enemy_bullets[9][self.pos] {
            self.terminal = true;
        }

        if self.aliens[9][self.pos] {
            self.terminal = true;
        }
        if self.alien_move_timer == 0 {
            self.alien_move_timer = (count(&self.aliens) as i32).min(self.enemy_move_interval);
            if (self.column_occupied(0) && self.alien_dir < 0) || (self.column_occupied(9) && self.alien_dir > 0) {
                self.alien_dir = -self.alien_dir;
                if self.aliens[9].iter().any(|&a| a) {
                    self.terminal = true;
                }
                roll_rows_down(&mut self.aliens);
            } else {
                roll_cols(&mut self.aliens, self.alien_dir);
            }
            if self.aliens[9][self.pos] {
                self.terminal = true;
            }
        }
        if self.alien_shot_timer == 0 {
            self.alien_shot_timer = ENEMY_SHOT_INTERVAL;
            if let Some((row, col)) = self.nearest_alien(self.pos) {
                self.enemy_bullets[row][col] = true;
            }
        }

        for row in 0..GRID {
            for col in 0..GRID {
                if self.aliens[row][col] && self.friendly_bullets[row][col] {
                    r += 1;
                    self.aliens[row][col] = false;
                    self.friendly_bullets[row][col] = false;
                }
            }
        }

        if self.shot_timer > 0 {
            self.shot_timer -= 1;
        }
        self.alien_move_timer -= 1;
        self.alien_shot_timer -= 1;
        if count(&self.aliens) == 0 {
            if self.enemy_move_interval > 6 && self.ramping {
                self.enemy_move_interval -= 1;
                self.ramp_index += 1;
            }
            self.spawn_aliens();
        }
        (r, self.terminal)
    }

    fn render(&self, out: &mut [u8]) {
        set(out, CANNON, 9, self.pos);
        paint(out, ALIEN, &self.aliens);
        if self.alien_dir < 0 {
            paint(out, ALIEN_LEFT, &self.aliens);
        } else {
            paint(out, ALIEN_RIGHT, &self.aliens);
        }
        paint(out, FRIENDLY_BULLET, &self.friendly_bullets);
        paint(out, ENEMY_BULLET, &self.enemy_bullets);
    }
}
