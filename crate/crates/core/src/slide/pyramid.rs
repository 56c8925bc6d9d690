use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use rayon::prelude::*;

use super::{level_count, SlideError, SlideMeta, BACKGROUND, DEFAULT_MAX_EDGE, DEFAULT_MPP, DEFAULT_TILE_SIZE};

/// Metadata supplied alongside a source raster when building a pyramid.
#[derive(Debug, Clone)]
pub struct MetaOverrides {
    pub id: String,
    pub tile_size: u32,
    pub mpp: f64,
    /// Rasters with either edge above this are rejected.
    pub max_edge: u32,
}

impl MetaOverrides {
    pub fn new(id: impl Into<String>) -> Self {
        MetaOverrides { id: id.into(), tile_size: DEFAULT_TILE_SIZE, mpp: DEFAULT_MPP, max_edge: DEFAULT_MAX_EDGE }
    }
}

/// Read access to a tiled slide.
pub trait TileSource: Sync {
    fn meta(&self) -> &SlideMeta;

    /// Stored tile, padded to `tile_size` with [`BACKGROUND`] at the right and bottom edges.
    fn tile_at(&self, level: u32, col: u32, row: u32) -> Result<RgbImage, SlideError>;

    /// Level-0 region starting at `(x, y)`; pixels outside the slide are background.
    fn read_region(&self, x: i64, y: i64, w: u32, h: u32) -> Result<RgbImage, SlideError> {
        let meta = self.meta();
        let ts = meta.tile_size as i64;
        let mut out = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w as i64).min(meta.width0 as i64);
        let y1 = (y + h as i64).min(meta.height0 as i64);
        if x1 <= x0 || y1 <= y0 {
            return Ok(out);
        }
        for row in (y0 / ts)..=((y1 - 1) / ts) {
            for col in (x0 / ts)..=((x1 - 1) / ts) {
                let tile = self.tile_at(0, col as u32, row as u32)?;
                let tx = col * ts;
                let ty = row * ts;
                let sx0 = x0.max(tx);
                let sx1 = x1.min(tx + ts);
                let sy0 = y0.max(ty);
                let sy1 = y1.min(ty + ts);
                for sy in sy0..sy1 {
                    let src_off = (((sy - ty) * ts + (sx0 - tx)) * 3) as usize;
                    let dst_off = (((sy - y) * w as i64 + (sx0 - x)) * 3) as usize;
                    let n = ((sx1 - sx0) * 3) as usize;
                    out.as_mut()[dst_off..dst_off + n].copy_from_slice(&tile.as_raw()[src_off..src_off + n]);
                }
            }
        }
        Ok(out)
    }
}

/// Copies a window out of `src`, filling anything outside it with background.
fn copy_window(src: &RgbImage, x: i64, y: i64, w: u32, h: u32) -> RgbImage {
    let mut out = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
    let (sw, sh) = (src.width() as i64, src.height() as i64);
    let x0 = x.max(0);
    let x1 = (x + w as i64).min(sw);
    if x1 <= x0 {
        return out;
    }
    let n = ((x1 - x0) * 3) as usize;
    for sy in y.max(0)..(y + h as i64).min(sh) {
        let src_off = ((sy * sw + x0) * 3) as usize;
        let dst_off = (((sy - y) * w as i64 + (x0 - x)) * 3) as usize;
        out.as_mut()[dst_off..dst_off + n].copy_from_slice(&src.as_raw()[src_off..src_off + n]);
    }
    out
}

/// 2x box filter; odd trailing rows/columns average the pixels that exist.
pub(crate) fn downsample(src: &RgbImage) -> RgbImage {
    let (sw, sh) = src.dimensions();
    let (dw, dh) = (sw.div_ceil(2), sh.div_ceil(2));
    let mut dst = RgbImage::new(dw, dh);
    let raw = src.as_raw();
    for dy in 0..dh {
        for dx in 0..dw {
            let mut sum = [0u32; 3];
            let mut n = 0u32;
            for sy in (2 * dy)..(2 * dy + 2).min(sh) {
                for sx in (2 * dx)..(2 * dx + 2).min(sw) {
                    let o = ((sy * sw + sx) * 3) as usize;
                    for c in 0..3 {
                        sum[c] += raw[o + c] as u32;
                    }
                    n += 1;
                }
            }
            let px = [0, 1, 2].map(|c| ((sum[c] + n / 2) / n) as u8);
            dst.put_pixel(dx, dy, Rgb(px));
        }
    }
    dst
}

/// Full in-memory pyramid, one raster per level.
#[derive(Debug, Clone)]
pub struct Pyramid {
    meta: SlideMeta,
    levels: Vec<RgbImage>,
}

impl Pyramid {
    pub fn from_raster(raster: RgbImage, overrides: &MetaOverrides) -> Result<Self, SlideError> {
        let (w, h) = raster.dimensions();
        if w == 0 || h == 0 {
            return Err(SlideError::EmptyRaster);
        }
        if w > overrides.max_edge || h > overrides.max_edge {
            return Err(SlideError::TooLarge { width: w, height: h, max: overrides.max_edge });
        }
        let meta = SlideMeta::new(overrides.id.clone(), w, h, overrides.tile_size, overrides.mpp)?;
        debug_assert_eq!(meta.levels, level_count(w, h, overrides.tile_size));
        let mut levels = Vec::with_capacity(meta.levels as usize);
        levels.push(raster);
        for _ in 1..meta.levels {
            let next = downsample(levels.last().expect("level 0 present"));
            levels.push(next);
        }
        Ok(Pyramid { meta, levels })
    }

    pub fn level(&self, level: u32) -> Option<&RgbImage> {
        self.levels.get(level as usize)
    }

    /// Writes `meta.json` and every tile below `slide_dir`.
    pub fn write(&self, slide_dir: &Path) -> Result<(), SlideError> {
        fs::create_dir_all(slide_dir)?;
        for level in 0..self.meta.levels {
            let dir = slide_dir.join(format!("level_{level}"));
            fs::create_dir_all(&dir)?;
            let (cols, rows) = self.meta.tile_grid(level);
            let coords: Vec<(u32, u32)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (c, r))).collect();
            coords.par_iter().try_for_each(|&(col, row)| -> Result<(), SlideError> {
                let tile = self.tile_at(level, col, row)?;
                write_png(&dir.join(format!("{col}_{row}.png")), &tile)
            })?;
        }
        self.meta.save(slide_dir)
    }
}

impl TileSource for Pyramid {
    fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    fn tile_at(&self, level: u32, col: u32, row: u32) -> Result<RgbImage, SlideError> {
        let (cols, rows) = if level < self.meta.levels { self.meta.tile_grid(level) } else { (0, 0) };
        if col >= cols || row >= rows {
            return Err(SlideError::TileNotFound { level, col, row });
        }
        let ts = self.meta.tile_size;
        let img = &self.levels[level as usize];
        Ok(copy_window(img, (col * ts) as i64, (row * ts) as i64, ts, ts))
    }

    fn read_region(&self, x: i64, y: i64, w: u32, h: u32) -> Result<RgbImage, SlideError> {
        Ok(copy_window(&self.levels[0], x, y, w, h))
    }
}

pub(crate) fn write_png(path: &Path, img: &RgbImage) -> Result<(), SlideError> {
    let file = BufWriter::new(fs::File::create(path)?);
    PngEncoder::new_with_quality(file, CompressionType::Fast, FilterType::Sub).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(())
}

/// Builds the pyramid for `raster` and writes it to `<out_root>/<id>/`.
pub fn build_pyramid(raster: RgbImage, overrides: &MetaOverrides, out_root: &Path) -> Result<SlideMeta, SlideError> {
    let pyramid = Pyramid::from_raster(raster, overrides)?;
    pyramid.write(&out_root.join(&overrides.id))?;
    Ok(pyramid.meta)
}

/// Tile pyramid stored as `<slide_dir>/level_<L>/<col>_<row>.png`.
#[derive(Debug, Clone)]
pub struct TileStore {
    dir: PathBuf,
    meta: SlideMeta,
}

impl TileStore {
    pub fn open(slide_dir: impl Into<PathBuf>) -> Result<Self, SlideError> {
        let dir = slide_dir.into();
        let meta = SlideMeta::load(&dir)?;
        Ok(TileStore { dir, meta })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn tile_path(&self, level: u32, col: u32, row: u32) -> PathBuf {
        self.dir.join(format!("level_{level}")).join(format!("{col}_{row}.png"))
    }

    fn check_range(&self, level: u32, col: u32, row: u32) -> Result<(), SlideError> {
        let (cols, rows) = if level < self.meta.levels { self.meta.tile_grid(level) } else { (0, 0) };
        if col >= cols || row >= rows {
            return Err(SlideError::TileNotFound { level, col, row });
        }
        Ok(())
    }

    /// Encoded PNG bytes of a stored tile.
    pub fn tile_bytes(&self, level: u32, col: u32, row: u32) -> Result<Vec<u8>, SlideError> {
        self.check_range(level, col, row)?;
        let path = self.tile_path(level, col, row);
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SlideError::MissingTile(path.display().to_string()),
            _ => SlideError::Io(e),
        })
    }
}

impl TileSource for TileStore {
    fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    fn tile_at(&self, level: u32, col: u32, row: u32) -> Result<RgbImage, SlideError> {
        let bytes = self.tile_bytes(level, col, row)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?.to_rgb8();
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x ^ y) % 256) as u8]))
    }

    #[test]
    fn small_raster_levels() {
        let p = Pyramid::from_raster(gradient(512, 512), &MetaOverrides::new("a")).unwrap();
        assert_eq!(p.meta().levels, 2);
        assert_eq!(p.meta().tile_grid(1), (1, 1));
        assert_eq!(p.level(1).unwrap().dimensions(), (256, 256));
    }

    #[test]
    fn single_pixel_slide_is_padded() {
        let p = Pyramid::from_raster(RgbImage::from_pixel(1, 1, Rgb([0, 0, 0])), &MetaOverrides::new("dot")).unwrap();
        assert_eq!(p.meta().levels, 1);
        let t = p.tile_at(0, 0, 0).unwrap();
        assert_eq!(t.dimensions(), (256, 256));
        assert_eq!(t.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(t.get_pixel(1, 0), &Rgb(BACKGROUND));
        assert_eq!(t.get_pixel(255, 255), &Rgb(BACKGROUND));
    }

    #[test]
    fn rejects_empty_and_oversized() {
        assert!(matches!(
            Pyramid::from_raster(RgbImage::new(0, 4), &MetaOverrides::new("e")),
            Err(SlideError::EmptyRaster)
        ));
        let mut o = MetaOverrides::new("big");
        o.max_edge = 300;
        assert!(matches!(Pyramid::from_raster(gradient(301, 10), &o), Err(SlideError::TooLarge { .. })));
    }

    #[test]
    fn out_of_grid_tile_is_not_found() {
        let p = Pyramid::from_raster(gradient(600, 300), &MetaOverrides::new("g")).unwrap();
        let (cols, rows) = p.meta().tile_grid(0);
        assert!(p.tile_at(0, cols - 1, rows - 1).is_ok());
        assert!(matches!(p.tile_at(0, cols, 0), Err(SlideError::TileNotFound { .. })));
        assert!(matches!(p.tile_at(p.meta().levels, 0, 0), Err(SlideError::TileNotFound { .. })));
    }

    #[test]
    fn disk_store_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let raster = gradient(700, 530);
        let meta = build_pyramid(raster.clone(), &MetaOverrides::new("d"), dir.path()).unwrap();
        assert_eq!(meta.levels, 3);
        let store = TileStore::open(dir.path().join("d")).unwrap();
        assert_eq!(store.meta(), &meta);
        let mem = Pyramid::from_raster(raster, &MetaOverrides::new("d")).unwrap();
        for level in 0..meta.levels {
            let (cols, rows) = meta.tile_grid(level);
            for r in 0..rows {
                for c in 0..cols {
                    assert_eq!(store.tile_at(level, c, r).unwrap(), mem.tile_at(level, c, r).unwrap());
                }
            }
        }
        let top = store.tile_at(meta.levels - 1, 0, 0).unwrap();
        assert_eq!(top.dimensions(), (256, 256));
        assert_eq!(store.read_region(-5, 500, 40, 40).unwrap(), mem.read_region(-5, 500, 40, 40).unwrap());

        std::fs::remove_file(store.tile_path(0, 1, 1)).unwrap();
        assert!(matches!(store.tile_at(0, 1, 1), Err(SlideError::MissingTile(_))));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_pyramid(gradient(300, 300), &MetaOverrides::new("x"), a.path()).unwrap();
        build_pyramid(gradient(300, 300), &MetaOverrides::new("x"), b.path()).unwrap();
        for rel in ["meta.json", "level_0/1_1.png", "level_1/0_0.png"] {
            assert_eq!(std::fs::read(a.path().join("x").join(rel)).unwrap(), std::fs::read(b.path().join("x").join(rel)).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn downsampled_level_matches_box_filter(w in 1u32..300, h in 1u32..300, seed in any::<u32>()) {
            let raster = RgbImage::from_fn(w, h, |x, y| {
                let v = (x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503) ^ seed) as u8;
                Rgb([v, v.wrapping_mul(3), v ^ 0x5a])
            });
            let p = Pyramid::from_raster(raster, &MetaOverrides { tile_size: 64, ..MetaOverrides::new("p") }).unwrap();
            for level in 0..p.meta().levels - 1 {
                let src = p.level(level).unwrap();
                let dst = p.level(level + 1).unwrap();
                prop_assert_eq!(dst.dimensions(), p.meta().level_dims(level + 1));
                for (dx, dy, px) in dst.enumerate_pixels() {
                    for c in 0..3 {
                        let mut vals = Vec::new();
                        for sy in 2 * dy..(2 * dy + 2).min(src.height()) {
                            for sx in 2 * dx..(2 * dx + 2).min(src.width()) {
                                vals.push(src.get_pixel(sx, sy)[c] as f64);
                            }
                        }
                        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                        prop_assert!((px[c] as f64 - mean).abs() <= 1.0);
                    }
                }
            }
        }

        #[test]
        fn region_reassembles_from_tiles(x in 0u32..500, y in 0u32..400, w in 1u32..300, h in 1u32..300) {
            let raster = gradient(640, 480);
            let p = Pyramid::from_raster(raster.clone(), &MetaOverrides { tile_size: 64, ..MetaOverrides::new("r") }).unwrap();
            // default trait path stitches level-0 tiles
            struct Tiles<'a>(&'a Pyramid);
            impl TileSource for Tiles<'_> {
                fn meta(&self) -> &SlideMeta { self.0.meta() }
                fn tile_at(&self, l: u32, c: u32, r: u32) -> Result<RgbImage, SlideError> { self.0.tile_at(l, c, r) }
            }
            let stitched = Tiles(&p).read_region(x as i64, y as i64, w, h).unwrap();
            for (dx, dy, px) in stitched.enumerate_pixels() {
                let (sx, sy) = (x + dx, y + dy);
                let expect = if sx < 640 && sy < 480 { *raster.get_pixel(sx, sy) } else { Rgb(BACKGROUND) };
                prop_assert_eq!(*px, expect);
            }
        }
    }
}
