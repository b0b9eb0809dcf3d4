from pathlib import Path
from typing import Dict, Tuple
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill
from config.settings import settings
from utils.logger import get_logger

logger = get_logger(__name__)

# SVG reproducible: sin fecha y con sal de hash fija
plt.rcParams['svg.hashsalt'] = 'multitask-lab'


class ExperimentReportGenerator:
    '''Escribe las salidas de un experimento: CSV de trazas y resumen, SVG y Excel opcional'''

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def guardar_csv(self, df: pd.DataFrame, filename: str) -> Path:
        '''CSV UTF-8, separado por comas, con cabecera y formato de flotantes fijo'''
        filepath = self.output_dir / filename
        df.to_csv(
            filepath, index=False, encoding='utf-8', lineterminator='\n',
            float_format=settings.CSV_FLOAT_FORMAT,
        )
        logger.info(f'💾 {filepath.name}: {len(df)} filas')
        return filepath

    def generar_svg(self, curves: Dict[str, Tuple[np.ndarray, np.ndarray]], filename: str,
                    title: str, xlabel: str, ylabel: str, log_scale: bool = False) -> Path:
        '''Gráfico de líneas estático, una curva por etiqueta (en orden de etiqueta)'''
        filepath = self.output_dir / filename
        fig, ax = plt.subplots(figsize=(7, 4.5))
        try:
            for label in sorted(curves):
                x, y = curves[label]
                ax.plot(x, y, label=label, linewidth=1.5)
            if log_scale:
                ax.set_xscale('log')
                ax.set_yscale('log')
            ax.set_title(title)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            ax.grid(alpha=0.3)
            if curves:
                ax.legend(fontsize=8)
            fig.tight_layout()
            fig.savefig(filepath, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
        logger.info(f'📈 {filepath.name} generado ({len(curves)} curvas)')
        return filepath

    def generar_excel(self, summary: pd.DataFrame, metricas: Dict[str, object],
                      filename: str = 'summary.xlsx') -> Path:
        '''Excel con el resumen formateado y una hoja de métricas generales'''
        filepath = self.output_dir / filename
        with pd.ExcelWriter(filepath, engine='openpyxl') as writer:
            summary.to_excel(writer, sheet_name='Experimento', index=False)
            worksheet = writer.sheets['Experimento']
            self._aplicar_estilos_header(worksheet)
            self._ajustar_columnas(worksheet)
            self._crear_hoja_resumen(writer, metricas)
        logger.info(f'📊 Excel generado: {filepath.name}')
        return filepath

    def _aplicar_estilos_header(self, worksheet):
        '''Aplica estilos al header'''
        header_fill = PatternFill(start_color='366092', end_color='366092', fill_type='solid')
        header_font = Font(bold=True, color='FFFFFF', size=11)
        header_alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)

        for cell in worksheet[1]:
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = header_alignment

    def _ajustar_columnas(self, worksheet):
        '''Ajusta el ancho de las columnas automáticamente'''
        for column in worksheet.columns:
            max_length = max(len(str(cell.value)) for cell in column if cell.value is not None) \
                if any(cell.value is not None for cell in column) else 0
            adjusted_width = min(max(max_length + 2, 12), 60)
            worksheet.column_dimensions[column[0].column_letter].width = adjusted_width

    def _crear_hoja_resumen(self, writer, metricas: Dict[str, object]):
        '''Hoja "Resumen" con métricas clave-valor'''
        df_resumen = pd.DataFrame({
            'Métrica': list(metricas.keys()),
            'Valor': [str(v) for v in metricas.values()],
        })
        df_resumen.to_excel(writer, sheet_name='Resumen', index=False)

        ws_resumen = writer.sheets['Resumen']
        self._aplicar_estilos_header(ws_resumen)
        ws_resumen.column_dimensions['A'].width = 35
        ws_resumen.column_dimensions['B'].width = 40
