use super::{AnnotationRecord, Category, Gender, Happiness, Makeup, ObserverGender, Race};
use crate::tensor::Tensor;

/// gender (2) + race (3) + happiness (4) + makeup (4).
pub const BASE_ATTRIBUTE_LEN: usize = 13;
/// Base attributes followed by the observer-gender block (2).
pub const OBSERVER_ATTRIBUTE_LEN: usize = 15;

/// Concatenated one-hot blocks, in the order
/// gender ‖ race ‖ happiness ‖ makeup (‖ observer gender).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttributeVector {
    values: Vec<u8>,
}

impl AttributeVector {
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_observer(&self) -> bool {
        self.values.len() == OBSERVER_ATTRIBUTE_LEN
    }

    /// Block sizes matching this vector's length.
    pub fn block_sizes(&self) -> &'static [usize] {
        if self.has_observer() {
            &[2, 3, 4, 4, 2]
        } else {
            &[2, 3, 4, 4]
        }
    }

    /// True when every block holds exactly one 1 and the rest zeros.
    pub fn is_valid(&self) -> bool {
        if self.len() != BASE_ATTRIBUTE_LEN && self.len() != OBSERVER_ATTRIBUTE_LEN {
            return false;
        }
        let mut offset = 0;
        for &size in self.block_sizes() {
            let block = &self.values[offset..offset + size];
            if block.iter().any(|&v| v > 1) || block.iter().filter(|&&v| v == 1).count() != 1 {
                return false;
            }
            offset += size;
        }
        true
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.values.iter().map(|&v| f64::from(v)).collect())
    }
}

fn push_block<C: Category>(values: &mut Vec<u8>, value: C) {
    let start = values.len();
    values.resize(start + C::ALL.len(), 0);
    values[start + value.index()] = 1;
}

pub fn encode_attributes(record: &AnnotationRecord, observer: Option<ObserverGender>) -> AttributeVector {
    encode_categories(record.gender, record.race, record.happiness, record.makeup, observer)
}

pub(crate) fn encode_categories(
    gender: Gender,
    race: Race,
    happiness: Happiness,
    makeup: Makeup,
    observer: Option<ObserverGender>,
) -> AttributeVector {
    let mut values = Vec::with_capacity(OBSERVER_ATTRIBUTE_LEN);
    push_block(&mut values, gender);
    push_block(&mut values, race);
    push_block(&mut values, happiness);
    push_block(&mut values, makeup);
    if let Some(observer) = observer {
        push_block(&mut values, observer);
    }
    AttributeVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use proptest::prelude::*;

    fn record(gender: Gender, race: Race, happiness: Happiness, makeup: Makeup) -> AnnotationRecord {
        AnnotationRecord {
            gender,
            race,
            happiness,
            makeup,
            ..AnnotationRecord::example()
        }
    }

    #[test]
    fn gender_block_follows_documented_order() {
        let male = encode_attributes(&record(Gender::Male, Race::Asian, Happiness::Happy, Makeup::Makeup), None);
        let female = encode_attributes(&record(Gender::Female, Race::Asian, Happiness::Happy, Makeup::Makeup), None);
        assert_eq!(&male.values()[..2], &[0, 1]);
        assert_eq!(&female.values()[..2], &[1, 0]);
    }

    #[test]
    fn full_base_vector() {
        let v = encode_attributes(&record(Gender::Female, Race::Asian, Happiness::Happy, Makeup::Makeup), None);
        assert_eq!(v.values(), &[1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        let obs = encode_attributes(
            &record(Gender::Female, Race::Asian, Happiness::Happy, Makeup::Makeup),
            Some(ObserverGender::Male),
        );
        assert_eq!(obs.len(), 15);
        assert_eq!(&obs.values()[..13], v.values());
        assert_eq!(&obs.values()[13..], &[0, 1]);
    }

    #[test]
    fn encoding_is_injective() {
        let mut base = HashSet::new();
        let mut observed = HashSet::new();
        for &g in Gender::ALL {
            for &r in Race::ALL {
                for &h in Happiness::ALL {
                    for &m in Makeup::ALL {
                        let rec = record(g, r, h, m);
                        base.insert(encode_attributes(&rec, None));
                        for &o in ObserverGender::ALL {
                            observed.insert(encode_attributes(&rec, Some(o)));
                        }
                    }
                }
            }
        }
        assert_eq!(base.len(), 96);
        assert_eq!(observed.len(), 192);
    }

    proptest! {
        #[test]
        fn every_block_is_one_hot(g in 0usize..2, r in 0usize..3, h in 0usize..4, m in 0usize..4, o in 0usize..3) {
            let observer = ObserverGender::ALL.get(o).copied();
            let v = encode_categories(Gender::ALL[g], Race::ALL[r], Happiness::ALL[h], Makeup::ALL[m], observer);
            prop_assert!(v.is_valid());
            prop_assert_eq!(v.values().iter().map(|&x| x as usize).sum::<usize>(), v.block_sizes().len());
        }
    }
}
