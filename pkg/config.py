# config.py

# === Параметры приёмника Боба (значения из эксперимента) ===
DEFAULT_ETA_DET = 0.4
# Фоновые вероятности щелчка на бит-слот (окно совпадений 1 нс), каналы h, v, d, a
DEFAULT_BACKGROUND = (430e-9, 1560e-9, 950e-9, 1200e-9)
MAX_BACKGROUND = 1e-3

# === Параметры линии ===
DEFAULT_FIDELITY_AB = 0.9831
DEFAULT_FIDELITY_EB = 0.9904
DEFAULT_LOSS_GRID_DB = tuple(float(x) for x in range(3, 16))

# === Детекторы Евы (SNSPD) ===
DEFAULT_ETA_E = 0.85
DEFAULT_EVE_DARK = 1e-9
MAX_EVE_DARK = 1e-6

# === Оптимизатор ===
DEFAULT_MU_MIN = 1e-6
DEFAULT_MU_MAX = 1e6
DEFAULT_CONSTRAINT_TOL = 1e-4
DEFAULT_OBJECTIVE_TOL = 1e-6
DEFAULT_MAX_ITERATIONS = 10_000
DEFAULT_RESTARTS = 8
# Вес внешнего штрафа за нарушение |R_e/R_ab - 1|
PENALTY_WEIGHT = 10.0
# Верхняя граница QBER, при которой Алиса и Боб прерывают сеанс
QBER_ABORT_THRESHOLD = 0.11

# === Геометрия сканирования ===
SCAN_HALF_RANGE_MRAD = 1.8384
SCAN_POINTS = 97  # шаг 38.3 мкрад
RECEIVER_FOCAL_LENGTH_MM = 250.0
DEFAULT_PINHOLE_EDGE_URAD = 10.0

# === Пороги поиска углов атаки: (eta_min, delta_min) по поляризациям ===
PAPER_THRESHOLDS = {
    "H": (0.2, 75.0),
    "V": (0.002, 8.0),
    "D": (0.4, 80.0),
    "A": (0.1, 20.0),
}
TIGHT_THRESHOLDS = {pol: (0.001, 4.0) for pol in ("H", "V", "D", "A")}

# === Монте-Карло ===
DEFAULT_N_PULSES = 1_000_000
MC_CHUNK_PULSES = 500_000
Z_SCORE_LIMIT = 3.0

DEFAULT_SEED = 1

# === Логирование ===
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

# === Моделирование сырого скана ===
RAW_PEAK_RATE_CPS = 2e5
# Фоновые скорости счёта (отсчёты/с) соответствуют DEFAULT_BACKGROUND при окне 1 нс
RAW_BACKGROUND_CPS = tuple(c * 1e9 for c in DEFAULT_BACKGROUND)
