// placeholder during scaffold
