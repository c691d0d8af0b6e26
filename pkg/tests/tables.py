"""Published layer summaries and class counts used as fixtures."""

TABLE1_FTCM = [
    ('Conv1d-1', '[-1, 32, 500]', 2336),
    ('BatchNorm1d-2', '[-1, 32, 500]', 64),
    ('ReLU-3', '[-1, 32, 500]', 0),
    ('MaxPool1d-4', '[-1, 32, 499]', 0),
    ('Conv1d-5', '[-1, 64, 499]', 6208),
    ('BatchNorm1d-6', '[-1, 64, 499]', 128),
    ('ReLU-7', '[-1, 64, 499]', 0),
    ('MaxPool1d-8', '[-1, 64, 498]', 0),
    ('Conv1d-9', '[-1, 128, 498]', 24704),
    ('BatchNorm1d-10', '[-1, 128, 498]', 256),
    ('ReLU-11', '[-1, 128, 498]', 0),
    ('MaxPool1d-12', '[-1, 128, 497]', 0),
    ('Conv1d-13', '[-1, 256, 497]', 98560),
    ('BatchNorm1d-14', '[-1, 256, 497]', 512),
    ('ReLU-15', '[-1, 256, 497]', 0),
    ('MaxPool1d-16', '[-1, 256, 248]', 0),
    ('GRU-17', '[[[-1, 248, 512], [-1, 2, 512]]]', 0),
    ('Linear-18', '[-1, 128]', 65664),
    ('ReLU-19', '[-1, 128]', 0),
    ('Dropout-20', '[-1, 128]', 0),
    ('Linear-21', '[-1, 7]', 903),
]
TABLE1_TOTAL = 199_335

TABLE2_FLM = [
    ('Conv1d-1', '[-1, 32, 500]', 2336),
    ('BatchNorm1d-2', '[-1, 32, 500]', 64),
    ('ReLU-3', '[-1, 32, 500]', 0),
    ('MaxPool1d-4', '[-1, 32, 499]', 0),
    ('Conv1d-5', '[-1, 64, 499]', 6208),
    ('BatchNorm1d-6', '[-1, 64, 499]', 128),
    ('ReLU-7', '[-1, 64, 499]', 0),
    ('MaxPool1d-8', '[-1, 64, 498]', 0),
    ('Conv1d-9', '[-1, 128, 498]', 24704),
    ('BatchNorm1d-10', '[-1, 128, 498]', 256),
    ('ReLU-11', '[-1, 128, 498]', 0),
    ('MaxPool1d-12', '[-1, 128, 497]', 0),
    ('Conv1d-13', '[-1, 256, 497]', 98560),
    ('BatchNorm1d-14', '[-1, 256, 497]', 512),
    ('ReLU-15', '[-1, 256, 497]', 0),
    ('MaxPool1d-16', '[-1, 256, 496]', 0),
    ('Conv1d-17', '[-1, 512, 496]', 393728),
    ('BatchNorm1d-18', '[-1, 512, 496]', 1024),
    ('ReLU-19', '[-1, 512, 496]', 0),
    ('MaxPool1d-20', '[-1, 512, 495]', 0),
    ('GRU-21', '[[[-1, 495, 512], [-1, 2, 512]]]', 0),
    ('Linear-22', '[-1, 128]', 65664),
    ('ReLU-23', '[-1, 128]', 0),
    ('Dropout-24', '[-1, 128]', 0),
    ('Linear-25', '[-1, 7]', 903),
]
TABLE2_TOTAL = 594_087

# class -> count, location and type tasks
TABLE4_LOCATION = {"H": 232_899, "L1": 298_397, "L2": 244_901, "L3": 237_001,
                   "L1L2": 254_700, "L1L3": 246_298, "L2L3": 252_996}
TABLE4_TYPE = {"H": 231_698, "F1": 240_899, "F2": 245_796, "F3": 239_198,
               "F1F2": 243_399, "F1F3": 256_998, "F2F3": 249_299}
LOCATION_U, LOCATION_SM = 232_899, 298_397
TYPE_U, TYPE_SM = 231_698, 256_998

TABLE5 = {"lr": 0.001, "batch_size": 1024, "epochs": 256, "optimizer": "adam", "dropout": 0.3,
          "l1": 1e-4, "l2": 1e-4, "patience": 8, "scheduler": "cosine", "sampling": "none"}

TABLE6_SPACE = {
    "conv_layers": [1, 2, 3, 4, 5, 6, 7],
    "gru_layers": [1, 2, 3, 4],
    "hidden": [32, 64, 256, 512],
    "fc_layers": [1, 2, 3, 4, 5, 6, 7],
    "resampling": ["none", "undersample", "smote"],
    "window": [10, 50, 100, 500, 1000],
    "step": [10, 50, 100, 500, 1000],
}

TABLE11_COLUMNS = ["IGs", "DeepLIFT", "Gradient SHAP", "DeepLIFT SHAP"]
