//! Screen layouts, rendering and hit testing.
//!
//! The device is a 12x20 grid of cells; each cell holds a widget code and is rendered as a
//! 3x3 block of identical pixels with intensity `code / (NUM_CODES - 1)`.

use serde::{Deserialize, Serialize};

pub const GRID_W: usize = 12;
pub const GRID_H: usize = 20;
pub const CELL_PX: usize = 3;
pub const PIXEL_W: usize = GRID_W * CELL_PX;
pub const PIXEL_H: usize = GRID_H * CELL_PX;
pub const N_PIXELS: usize = PIXEL_W * PIXEL_H;

pub const N_APPS: usize = 4;
pub const N_TOKENS: usize = 6;
pub const ITEMS_PER_PAGE: usize = 3;
pub const N_ITEMS: usize = 2 * ITEMS_PER_PAGE;

pub mod code {
    pub const BG: u8 = 0;
    pub const STATUS: u8 = 1;
    pub const APP0: u8 = 2;
    pub const SEARCH: u8 = 6;
    pub const SEARCH_FOCUS: u8 = 7;
    pub const GLYPH: u8 = 8;
    pub const ROW: u8 = 9;
    pub const AD: u8 = 10;
    pub const MARKER: u8 = 11;
    pub const MORE: u8 = 12;
    pub const ITEM_IMG: u8 = 13;
    pub const CART_BTN: u8 = 14;
    pub const BANNER: u8 = 15;
    pub const CHECKOUT_BTN: u8 = 16;
    pub const ORDER: u8 = 17;
    pub const POPUP: u8 = 18;
    pub const POPUP_X: u8 = 19;
}

pub const NUM_CODES: u8 = 20;

pub fn intensity(c: u8) -> f64 {
    c as f64 / (NUM_CODES - 1) as f64
}

/// Logical screen identity. Every variant renders to a distinct cell grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "screen", rename_all = "snake_case")]
pub enum Screen {
    Home,
    App { app: u8 },
    Focused { app: u8 },
    Results { app: u8, token: u8, page: u8 },
    Ad { app: u8, token: u8, page: u8 },
    Item { app: u8, token: u8, item: u8 },
    Cart { app: u8, token: u8, item: u8 },
    Order { app: u8, token: u8, item: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    fn fill(&self, cells: &mut [u8], c: u8) {
        for y in self.y0..=self.y1 {
            for x in self.x0..=self.x1 {
                cells[y * GRID_W + x] = c;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Widget {
    AppIcon(u8),
    SearchBox,
    AdRow,
    ResultRow(u8),
    More,
    AddToCart,
    Checkout,
    PopupClose,
}

const SEARCH_BOX: Rect = Rect::new(1, 4, 10, 5);
const AD_ROW: Rect = Rect::new(0, 7, 11, 8);
const MORE: Rect = Rect::new(8, 19, 11, 19);
const ADD_TO_CART: Rect = Rect::new(2, 13, 9, 14);
const CHECKOUT: Rect = Rect::new(2, 15, 9, 16);
const POPUP_W: (usize, usize) = (2, 9);
pub const POPUP_ROWS: usize = 5;
pub const POPUP_TOP_MIN: u8 = 6;
pub const POPUP_TOP_MAX: u8 = 12;

fn app_icon(k: usize) -> Rect {
    let x0 = 1 + 6 * (k % 2);
    let y0 = 3 + 6 * (k / 2);
    Rect::new(x0, y0, x0 + 3, y0 + 3)
}

fn result_row(i: usize) -> Rect {
    let y0 = 10 + 3 * i;
    Rect::new(0, y0, 11, y0 + 1)
}

pub fn popup_rect(top: u8) -> Rect {
    let top = top as usize;
    Rect::new(POPUP_W.0, top, POPUP_W.1, top + POPUP_ROWS - 1)
}

pub fn popup_close_cell(top: u8) -> (usize, usize) {
    (POPUP_W.1, top as usize)
}

impl Widget {
    pub fn rect(self) -> Rect {
        match self {
            Widget::AppIcon(k) => app_icon(k as usize),
            Widget::SearchBox => SEARCH_BOX,
            Widget::AdRow => AD_ROW,
            Widget::ResultRow(i) => result_row(i as usize),
            Widget::More => MORE,
            Widget::AddToCart => ADD_TO_CART,
            Widget::Checkout => CHECKOUT,
            Widget::PopupClose => Rect::new(0, 0, 0, 0),
        }
    }

    /// Canonical click cell (used by scripted agents).
    pub fn center(self) -> (usize, usize) {
        let r = self.rect();
        ((r.x0 + r.x1 + 1) / 2, r.y0)
    }
}

impl Screen {
    pub fn app(&self) -> Option<u8> {
        match *self {
            Screen::Home => None,
            Screen::App { app }
            | Screen::Focused { app }
            | Screen::Results { app, .. }
            | Screen::Ad { app, .. }
            | Screen::Item { app, .. }
            | Screen::Cart { app, .. }
            | Screen::Order { app, .. } => Some(app),
        }
    }

    /// Widgets visible on this screen (popups excluded).
    pub fn widgets(&self) -> Vec<Widget> {
        match *self {
            Screen::Home => (0..N_APPS as u8).map(Widget::AppIcon).collect(),
            Screen::App { .. } | Screen::Focused { .. } => vec![Widget::SearchBox],
            Screen::Results { page, .. } => {
                let mut w = vec![Widget::SearchBox, Widget::AdRow];
                w.extend((0..ITEMS_PER_PAGE as u8).map(Widget::ResultRow));
                if page == 0 {
                    w.push(Widget::More);
                }
                w
            }
            Screen::Ad { .. } | Screen::Order { .. } => vec![],
            Screen::Item { .. } => vec![Widget::AddToCart],
            Screen::Cart { .. } => vec![Widget::Checkout],
        }
    }

    pub fn hit_test(&self, x: usize, y: usize) -> Option<Widget> {
        self.widgets().into_iter().find(|w| w.rect().contains(x, y))
    }

    /// Where `Back` leads.
    pub fn parent(&self) -> Screen {
        match *self {
            Screen::Home => Screen::Home,
            Screen::App { .. } => Screen::Home,
            Screen::Focused { app } => Screen::App { app },
            Screen::Results { app, page: 0, .. } => Screen::App { app },
            Screen::Results { app, token, page } => Screen::Results {
                app,
                token,
                page: page - 1,
            },
            Screen::Ad { app, token, page } => Screen::Results { app, token, page },
            Screen::Item { app, token, item } => Screen::Results {
                app,
                token,
                page: item / ITEMS_PER_PAGE as u8,
            },
            Screen::Cart { app, token, item } => Screen::Item { app, token, item },
            Screen::Order { .. } => Screen::Home,
        }
    }

    /// Screen reached by clicking `widget`, if it does anything here.
    pub fn click(&self, widget: Widget) -> Option<Screen> {
        match (*self, widget) {
            (Screen::Home, Widget::AppIcon(k)) => Some(Screen::App { app: k }),
            (Screen::App { app }, Widget::SearchBox) => Some(Screen::Focused { app }),
            (Screen::Results { app, .. }, Widget::SearchBox) => Some(Screen::Focused { app }),
            (Screen::Results { app, token, page }, Widget::AdRow) => {
                Some(Screen::Ad { app, token, page })
            }
            (Screen::Results { app, token, page }, Widget::ResultRow(i)) => Some(Screen::Item {
                app,
                token,
                item: page * ITEMS_PER_PAGE as u8 + i,
            }),
            (Screen::Results { app, token, page: 0 }, Widget::More) => {
                Some(Screen::Results { app, token, page: 1 })
            }
            (Screen::Item { app, token, item }, Widget::AddToCart) => {
                Some(Screen::Cart { app, token, item })
            }
            (Screen::Cart { app, token, item }, Widget::Checkout) => {
                Some(Screen::Order { app, token, item })
            }
            _ => None,
        }
    }

    pub fn render_cells(&self) -> Vec<u8> {
        let mut cells = vec![code::BG; GRID_W * GRID_H];
        Rect::new(0, 0, GRID_W - 1, 0).fill(&mut cells, code::STATUS);
        let header = |cells: &mut [u8], app: u8| {
            Rect::new(0, 1, GRID_W - 1, 2).fill(cells, code::APP0 + app);
        };
        let item_markers = |cells: &mut [u8], token: u8, item: u8| {
            cells[(4 + item as usize) * GRID_W + 1] = code::MARKER;
            cells[(4 + token as usize) * GRID_W + 10] = code::GLYPH;
        };
        match *self {
            Screen::Home => {
                for k in 0..N_APPS {
                    app_icon(k).fill(&mut cells, code::APP0 + k as u8);
                }
            }
            Screen::App { app } => {
                header(&mut cells, app);
                SEARCH_BOX.fill(&mut cells, code::SEARCH);
            }
            Screen::Focused { app } => {
                header(&mut cells, app);
                SEARCH_BOX.fill(&mut cells, code::SEARCH_FOCUS);
            }
            Screen::Results { app, token, page } => {
                header(&mut cells, app);
                SEARCH_BOX.fill(&mut cells, code::SEARCH);
                cells[4 * GRID_W + 2 + token as usize] = code::GLYPH;
                AD_ROW.fill(&mut cells, code::AD);
                for i in 0..ITEMS_PER_PAGE {
                    let r = result_row(i);
                    r.fill(&mut cells, code::ROW);
                    // Result thumbnails differ per query and per page.
                    cells[r.y0 * GRID_W + (token as usize + i + 3 * page as usize) % GRID_W] =
                        code::MARKER;
                }
                if page == 0 {
                    MORE.fill(&mut cells, code::MORE);
                }
            }
            Screen::Ad { app, token, page } => {
                Rect::new(0, 1, GRID_W - 1, 6).fill(&mut cells, code::AD);
                cells[8 * GRID_W + app as usize] = code::MARKER;
                cells[9 * GRID_W + token as usize] = code::GLYPH;
                cells[10 * GRID_W + page as usize] = code::GLYPH;
            }
            Screen::Item { app, token, item } => {
                header(&mut cells, app);
                Rect::new(2, 4, 9, 10).fill(&mut cells, code::ITEM_IMG);
                item_markers(&mut cells, token, item);
                ADD_TO_CART.fill(&mut cells, code::CART_BTN);
            }
            Screen::Cart { app, token, item } => {
                header(&mut cells, app);
                Rect::new(2, 4, 9, 7).fill(&mut cells, code::BANNER);
                item_markers(&mut cells, token, item);
                CHECKOUT.fill(&mut cells, code::CHECKOUT_BTN);
            }
            Screen::Order { app, token, item } => {
                header(&mut cells, app);
                Rect::new(1, 3, 10, 12).fill(&mut cells, code::ORDER);
                item_markers(&mut cells, token, item);
            }
        }
        cells
    }
}

/// Draws a pop-up over `cells`.
pub fn overlay_popup(cells: &mut [u8], top: u8) {
    popup_rect(top).fill(cells, code::POPUP);
    let (x, y) = popup_close_cell(top);
    cells[y * GRID_W + x] = code::POPUP_X;
}

/// Expands a cell grid to pixels in `[0, 1]`, row-major over the pixel raster.
pub fn render_pixels(cells: &[u8]) -> Vec<f64> {
    let mut px = vec![0.0; N_PIXELS];
    for py in 0..PIXEL_H {
        for pxx in 0..PIXEL_W {
            px[py * PIXEL_W + pxx] = intensity(cells[(py / CELL_PX) * GRID_W + pxx / CELL_PX]);
        }
    }
    px
}

/// Plain PGM raster for debugging.
pub fn to_pgm(cells: &[u8]) -> String {
    let px = render_pixels(cells);
    let mut out = format!("P2\n{PIXEL_W} {PIXEL_H}\n255\n");
    for row in px.chunks(PIXEL_W) {
        let line: Vec<String> = row.iter().map(|v| ((v * 255.0).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
