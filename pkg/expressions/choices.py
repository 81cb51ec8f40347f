from django.db import models


class EmotionLabel(models.IntegerChoices):
    CONFUSION = 0, 'Confusion'
    ANGER = 1, 'Anger'
    DISGUST = 2, 'Disgust'


class Gender(models.TextChoices):
    FEMALE = 'F', 'Female'
    MALE = 'M', 'Male'


class Ethnicity(models.TextChoices):
    CAUCASIAN = 'Caucasian', 'Caucasian'
    BLACK = 'Black', 'Black'
    ASIAN = 'Asian', 'Asian'
    HISPANIC = 'Hispanic', 'Hispanic'


class Provenance(models.TextChoices):
    SYNTHETIC = 'Synthetic', 'Synthetic'
    SURROGATE_REAL = 'SurrogateReal', 'Surrogate real'


class WindowMode(models.TextChoices):
    TRAIN_RANDOM = 'train-random', 'TrainRandomWindow'
    TEST_CENTER = 'test-center', 'TestCenterWindow'


class StrategyKind(models.TextChoices):
    REAL_ONLY = 'real-only', 'RealOnly'
    PRETRAIN_FINETUNE = 'pretrain-finetune', 'PretrainFinetune'
    MIXED_RATIO = 'mixed', 'MixedRatio'


class ModelKind(models.TextChoices):
    INCEPTION = 'inception', 'InceptionTime'
    KNN = 'knn', 'KNN-DTW'
