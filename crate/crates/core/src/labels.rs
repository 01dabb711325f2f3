//! The 30 scene categories, in category-ID order.

pub const NUM_CLASSES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Category {
    /// 1-based category ID.
    pub id: u8,
    pub name: &'static str,
    /// Dataset directory name.
    pub slug: &'static str,
}

const fn cat(id: u8, name: &'static str, slug: &'static str) -> Category {
    Category { id, name, slug }
}

pub const CATEGORIES: [Category; NUM_CLASSES] = [
    cat(1, "Portrait", "01_portrait"),
    cat(2, "Group Portrait", "02_group_portrait"),
    cat(3, "Kids / Infants", "03_kids_infants"),
    cat(4, "Dog", "04_dog"),
    cat(5, "Cat", "05_cat"),
    cat(6, "Macro / Close-up", "06_macro_closeup"),
    cat(7, "Food / Gourmet", "07_food_gourmet"),
    cat(8, "Beach", "08_beach"),
    cat(9, "Mountains", "09_mountains"),
    cat(10, "Waterfalls", "10_waterfalls"),
    cat(11, "Snow", "11_snow"),
    cat(12, "Landscape", "12_landscape"),
    cat(13, "Underwater", "13_underwater"),
    cat(14, "Architecture", "14_architecture"),
    cat(15, "Sunrise / Sunset", "15_sunrise_sunset"),
    cat(16, "Blue Sky", "16_blue_sky"),
    cat(17, "Overcast / Cloudy Sky", "17_overcast_cloudy_sky"),
    cat(18, "Greenery / Green Plants", "18_greenery_green_plants"),
    cat(19, "Autumn Plants", "19_autumn_plants"),
    cat(20, "Flower", "20_flower"),
    cat(21, "Night Shot", "21_night_shot"),
    cat(22, "Stage / Concert", "22_stage_concert"),
    cat(23, "Fireworks", "23_fireworks"),
    cat(24, "Candlelight", "24_candlelight"),
    cat(25, "Neon Lights / Signs", "25_neon_lights_signs"),
    cat(26, "Indoor", "26_indoor"),
    cat(27, "Backlight / Contre-jour", "27_backlight_contre_jour"),
    cat(28, "Text / Document", "28_text_document"),
    cat(29, "QR Code", "29_qr_code"),
    cat(30, "Monitor Screen", "30_monitor_screen"),
];

/// Category names as owned strings, the label table every model carries.
pub fn default_labels() -> alloc::vec::Vec<alloc::string::String> {
    CATEGORIES.iter().map(|c| c.name.into()).collect()
}

/// 0-based class index of a dataset directory name.
pub fn index_of_slug(slug: &str) -> Option<usize> {
    CATEGORIES.iter().position(|c| c.slug == slug)
}
