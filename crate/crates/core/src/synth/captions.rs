use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Scene, SceneObject, Shape};
use crate::textprep::GazetteerRecognizer;

/// News nouns used for each shape; the first is the plain form used in
/// referring expressions.
pub const SHAPE_NOUNS: [(Shape, [&str; 3]); 4] = [
    (Shape::Circle, ["balloon", "ball", "globe"]),
    (Shape::Square, ["crate", "box", "placard"]),
    (Shape::Triangle, ["tent", "pennant", "cone"]),
    (Shape::Bar, ["banner", "barrier", "plank"]),
];

pub(crate) fn nouns(shape: Shape) -> &'static [&'static str; 3] {
    &SHAPE_NOUNS.iter().find(|(s, _)| *s == shape).expect("every shape listed").1
}

const EVENTS: &[&str] = &[
    "addresses striking dock workers demanding higher wages",
    "inspects flood damage after heavy monsoon rains",
    "greets cheering supporters after winning the runoff election",
    "unveils a memorial honouring fallen firefighters",
    "joins volunteers distributing food parcels to displaced families",
    "leads a candlelight vigil for earthquake victims",
    "signs a trade agreement with visiting ministers",
    "tours a refugee camp housing thousands of evacuees",
    "celebrates a championship victory with jubilant fans",
    "announces sweeping budget cuts to public transport",
    "protests against plans to demolish historic housing",
    "testifies before lawmakers about rising fuel prices",
    "watches firefighters battle a wildfire spreading across hillsides",
    "plants saplings during a reforestation campaign",
    "speaks to reporters outside the courthouse after the verdict",
    "opens a new children's hospital wing",
    "marches with teachers calling for smaller classes",
    "casts a ballot during early voting",
    "rescues stranded residents from rising floodwaters",
    "launches a vaccination drive for rural villages",
    "inaugurates a solar power plant",
    "performs at a benefit concert raising money for orphans",
    "mourns victims of the ferry disaster",
    "negotiates a ceasefire between rival militias",
    "cheers marathon runners crossing the finish line",
    "hands out blankets to homeless people during a cold snap",
    "examines wreckage from the derailed freight train",
    "rallies farmers opposing new water restrictions",
    "commemorates the anniversary of the independence uprising",
    "displays seized counterfeit goods at a press briefing",
    "cuts a ribbon opening the renovated railway bridge",
    "comforts survivors of the mudslide",
    "demonstrates against police brutality",
    "tests drinking water contaminated by a chemical spill",
    "presents awards to outstanding nurses",
    "evacuates tourists threatened by volcanic ash",
];

const TEMPLATES: &[&str] = &[
    "{subj} {event} beside the {obj} in {place}.",
    "{subj} {event} next to a {obj} in {place} on {date}.",
    "Near the {obj}, {subj} {event} in {place}.",
    "{subj} {event} while a {obj} stands nearby in {place}.",
    "In {place}, {subj} {event} by the {obj}.",
];

const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

/// Generates news-style captions naming entities from the bundled
/// gazetteer and describing the scene subject by colour and shape noun.
#[derive(Debug, Clone)]
pub struct NewsCaptioner {
    people: Vec<String>,
    groups: Vec<String>,
    orgs: Vec<String>,
    places: Vec<String>,
}

impl Default for NewsCaptioner {
    fn default() -> Self {
        let g = GazetteerRecognizer::default();
        let owned = |label: &str| g.phrases_for(label).into_iter().map(String::from).collect::<Vec<_>>();
        let mut places = owned("GPE");
        places.extend(owned("LOC"));
        places.extend(owned("FAC"));
        Self {
            people: owned("PERSON"),
            groups: owned("NORP"),
            orgs: owned("ORG")
                .into_iter()
                .filter(|o| o != "Reuters")
                .collect(),
            places,
        }
    }
}

impl NewsCaptioner {
    fn subject(&self, rng: &mut impl Rng) -> String {
        match rng.random_range(0..10) {
            0..=5 => self.people.choose(rng).expect("people").clone(),
            6..=7 => format!("A crowd of {}", self.groups.choose(rng).expect("groups")),
            _ => format!("A spokesperson for the {}", self.orgs.choose(rng).expect("orgs")),
        }
    }

    /// One caption about `object`, drawn with `rng`.
    pub fn caption_for(&self, object: &SceneObject, rng: &mut impl Rng) -> String {
        let noun = nouns(object.shape).choose(rng).expect("nouns");
        let obj = format!("{} {}", object.colour.name(), noun);
        let event = EVENTS.choose(rng).expect("events");
        let template = TEMPLATES.choose(rng).expect("templates");
        let date = format!("{} {}, {}", MONTHS.choose(rng).expect("months"), rng.random_range(1..=28), rng.random_range(2005..=2021));
        let mut subj = self.subject(rng);
        if !template.starts_with("{subj}") && subj.starts_with("A ") {
            subj = format!("a {}", &subj[2..]);
        }
        template
            .replace("{subj}", &subj)
            .replace("{event}", event)
            .replace("{obj}", &obj)
            .replace("{place}", self.places.choose(rng).expect("places"))
            .replace("{date}", &date)
    }

    /// Caption about the scene's subject.
    pub fn caption(&self, scene: &Scene, rng: &mut impl Rng) -> String {
        self.caption_for(&scene.objects[scene.subject], rng)
    }
}

/// Short description of one object, e.g. "the red balloon".
pub fn referring_expression(object: &SceneObject) -> String {
    format!("the {} {}", object.colour.name(), nouns(object.shape)[0])
}
