# utils/config.py
import os
from dotenv import load_dotenv

# Charger les variables d'environnement du fichier .env
load_dotenv()

# --- Répertoires et journalisation ---
OUTPUT_DIR = os.getenv("LMM_OUTPUT_DIR", "outputs")   # Dossier de sortie par défaut de la CLI
LOG_LEVEL = os.getenv("LMM_LOG_LEVEL", "INFO")
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# --- Configuration de la Base de Données (registre des ajustements) ---
DATABASE_DIR = "database"
DATABASE_FILE = os.path.join(DATABASE_DIR, "fits.db")
DATABASE_URL = os.getenv("LMM_DATABASE_URL", f"sqlite:///{DATABASE_FILE}")

# --- Jeu de données réel (optionnel, pour les tests de reproduction) ---
FIXTURE_FILE = os.getenv("LMM_FIXTURE", os.path.join("tests", "fixtures", "BodyWeightData.csv"))

# --- Schéma des fichiers ---
ID_COLUMN = "mouseid"
GROUP_COLUMN = "grp"
TIME_COLUMN = "tw"
RESPONSE_COLUMN = "weight"
WEIGHT_PREFIX = "bw"                # Colonnes larges bw1..bwW
LONG_COLUMNS = [ID_COLUMN, GROUP_COLUMN, TIME_COLUMN, RESPONSE_COLUMN]

# --- Modèles candidats ---
MODEL_FORMULAS = {
    "m1": "weight ~ tw + grp",
    "m2": "weight ~ tw * grp",
    "m3": "weight ~ tw + grp + tw:grp3",
}
MODEL_LABELS = {
    "m1": "Model 1: tw + grp",
    "m2": "Model 2: tw * grp",
    "m3": "Model 3: tw + grp + tw:grp3",
}
STRUCTURE_LABELS = {
    "ri": "Main: random intercept",
    "ris": "RS: random intercept + slope",
    "ri+ar1": "AR(1): rand. intercept + AR(1)",
    "ri+hv": "HV: rand. intercept + hetero. variance",
}
STRUCTURE_SHORT = {"ri": "Main", "ris": "RS", "ri+ar1": "AR(1)", "ri+hv": "HV"}
MAIN_SET = ["m1", "m2", "m3"]
SENSITIVITY_SET = ["ri", "ris", "ri+ar1", "ri+hv"]

# --- Groupes expérimentaux ---
GROUP_LABELS = {1: "wild-type", 2: "ob/ob pair-fed", 3: "ob/ob unrestricted"}
FIRST_WEEK = 1
LAST_WEEK = 12

# --- Paramètres numériques ---
RANK_TOL = 1e-10                    # Tolérance relative du QR pivoté
BOUNDARY_REL_TOL = 1e-4             # ET < 1e-4 × ET(réponse) => frontière
AR1_BOUNDARY = 0.999
BOUNDARY_CLAMP = 1e-6               # Valeur imposée à une composante en frontière
NM_XATOL = 1e-9                     # Diamètre du simplexe
NM_FATOL = 1e-10                    # Variation de la log-vraisemblance
NM_MAXITER_PER_PARAM = 2000
SIMPLEX_STEP = 0.5                  # Pas initial du simplexe (coordonnées libres)
GRADIENT_TOL = 1e-3                 # Norme du gradient acceptée en l'absence de convergence formelle
DENSE_MAX_N = 2000                  # Garde de l'oracle dense (matrice N×N)
CI_LEVEL = 0.95

# --- Simulation ---
DEFAULT_SEED = int(os.getenv("LMM_DEFAULT_SEED", "20240101"))
DEFAULT_LAYOUT = {1: 10, 2: 10, 3: 11}
DEFAULT_WEEKS = 12
# Coefficients "Main" du modèle 3 (ordre: (Intercept), tw, grp2, grp3, tw:grp3)
DEFAULT_BETA = [19.004, 0.337, 14.925, 17.254, 1.738]
DEFAULT_SD_INTERCEPT = 1.72
DEFAULT_SD_RESID = 1.37
