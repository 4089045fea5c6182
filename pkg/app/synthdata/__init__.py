from app.synthdata.augment import augment_sample, random_crop
from app.synthdata.generator import Sample, gen_dataset, gen_sample, load_split, read_manifest

__all__ = ["Sample", "augment_sample", "gen_dataset", "gen_sample", "load_split", "random_crop", "read_manifest"]
